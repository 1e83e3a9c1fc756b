"""
Report emission: memory accounting, reference contrasts, trade-offs, and
CSV / text / Markdown writers
"""
import csv
import logging
import math
import os

from composer import memory_breakdown, model_memory_bytes
from cost_model import (
    CMOS_POOLING,
    NDCAM_POOLING,
    PUBLISHED_AREA_SHARES,
    PUBLISHED_CHIP_AREA_MM2,
    PUBLISHED_CHIP_POWER_TABLE_W,
    PUBLISHED_CHIP_POWER_TEXT_W,
    PUBLISHED_ENERGY_SHARES,
    PUBLISHED_TIME_SHARES,
    REFERENCE_EFFICIENCY,
)
from validators import ValidationError

logger = logging.getLogger(__name__)

MEMORY_FORMULA = (
    "bytes = sum over layers of G*w*u*4 (product tables, 32-bit entries) "
    "+ (G*w + u)*4 (weight and input codebooks) + q*8 (activation LUT y/z rows) "
    "+ u_next*4 (encoder rows); G = 1 per FC layer, M per conv layer"
)
TRADEOFF_THRESHOLDS = (None, 0.01, 0.02, 0.04)
SHARE_TOLERANCE = 1e-9


def report_memory(rm):
    """Total bytes the model occupies in RNA memories (see MEMORY_FORMULA)"""
    total = model_memory_bytes(rm)
    logger.debug(f"📊 Model memory {total} bytes")
    return total


def check_shares(shares, name):
    """Shares must be non-negative and sum to one (or all be zero)"""
    total = math.fsum(shares.values())
    if any(v < 0 for v in shares.values()) or (total and abs(total - 1.0) > 1e-6):
        raise ValidationError(f"{name} shares do not sum to one: {total}")
    return shares


def compare_reference(report):
    """Published efficiency rows next to the simulated one"""
    rows = [
        {'design': name, 'source': 'published', 'gops_per_mm2': area, 'gops_per_w': power}
        for name, (area, power) in REFERENCE_EFFICIENCY.items()
    ]
    rows.append({
        'design': 'RAPIDNN (desk-scale)',
        'source': 'simulated',
        'gops_per_mm2': report.gops_per_mm2,
        'gops_per_w': report.gops_per_w,
    })
    return rows


def edp_tradeoff(rows, thresholds=TRADEOFF_THRESHOLDS):
    """Minimal-EDP grid point per accuracy-loss budget.

    A threshold of None means the smallest delta_e seen. EDP and memory are
    normalized to that minimum-delta_e choice.
    """
    if not rows:
        return []

    min_delta = min(r.delta_e for r in rows)
    picks = []
    for threshold in thresholds:
        budget = min_delta if threshold is None else max(threshold, min_delta)
        candidates = [r for r in rows if r.delta_e <= budget]
        best = min(candidates, key=lambda r: (r.edp, r.memory_bytes, r.w, r.u, r.q, r.seed))
        picks.append({'threshold': threshold, 'row': best})

    base = picks[0]['row'] if thresholds and thresholds[0] is None else min(rows, key=lambda r: r.delta_e)
    for pick in picks:
        row = pick['row']
        pick['edp_ratio'] = row.edp / base.edp if base.edp else 0.0
        pick['memory_ratio'] = row.memory_bytes / base.memory_bytes if base.memory_bytes else 0.0
    return picks


def sim_metrics(report):
    """Flat (metric, value) pairs of a SimReport"""
    metrics = [
        ('samples', report.samples),
        ('total_cycles', report.total_cycles),
        ('wall_time_s', report.wall_time_s),
        ('total_energy_j', report.total_energy_j),
    ]
    metrics += [(f'energy_j.{k}', v) for k, v in report.energy_j.items()]
    metrics += [(f'energy_share.{k}', v) for k, v in report.energy_shares.items()]
    metrics += [(f'time_cycles.{k}', v) for k, v in report.time_cycles.items()]
    metrics += [(f'time_share.{k}', v) for k, v in report.time_shares.items()]
    metrics += [
        ('edp_js', report.edp),
        ('area_mm2', report.area_mm2),
        ('rna_area_um2', report.rna_area_um2),
        ('chip_power_w', report.chip_power_w),
        ('memory_bytes', report.memory_bytes),
        ('throughput_sps', report.throughput_sps),
        ('gops', report.gops),
        ('gops_per_mm2', report.gops_per_mm2),
        ('gops_per_w', report.gops_per_w),
        ('rnas_used', report.rnas_used),
        ('error_rate', report.error_rate),
        ('functional_mismatches', report.functional_mismatches),
        ('staged_cam_mismatches', report.staged_cam_mismatches),
        ('cam_queries', report.cam_queries),
    ]
    metrics += [(f'area_mm2.{k}', v) for k, v in report.area_breakdown.items()]
    return metrics


def write_sim_csv(report, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['metric', 'value'])
        for name, value in sim_metrics(report):
            writer.writerow([name, '' if value is None else repr(value)])
    logger.info(f"💾 Wrote simulation CSV to {path}")
    return path


def _percent(value):
    return f"{100.0 * value:.1f}%"


def format_sim_text(report):
    check_shares(report.energy_shares, 'energy')
    check_shares(report.time_shares, 'time')

    lines = [
        "Simulation report",
        "=================",
        f"samples            {report.samples}",
        f"total cycles       {report.total_cycles}",
        f"wall time          {report.wall_time_s:.6e} s",
        f"energy             {report.total_energy_j:.6e} J",
        f"EDP                {report.edp:.6e} J*s",
        f"throughput         {report.throughput_sps:.3f} samples/s",
        f"chip area          {report.area_mm2:.3f} mm2 (published {PUBLISHED_CHIP_AREA_MM2} mm2)",
        f"RNA block area     {report.rna_area_um2:.1f} um2",
        f"chip power         {report.chip_power_w:.2f} W (published {PUBLISHED_CHIP_POWER_TABLE_W} W table, "
        f"{PUBLISHED_CHIP_POWER_TEXT_W} W text)",
        f"memory             {report.memory_bytes} bytes",
        f"RNAs used          {report.rnas_used}",
        f"error rate         {'n/a' if report.error_rate is None else f'{report.error_rate:.4f}'}",
        f"functional checks  {report.functional_mismatches} mismatches",
        f"staged CAM         {report.staged_cam_mismatches} of {report.cam_queries} searches off the nearest row",
        "",
        "Energy / time by block class",
    ]
    energy = report.energy_shares
    time = report.time_shares
    for name in report.energy_j:
        lines.append(f"  {name:<18} energy {_percent(energy[name]):>7}  time {_percent(time.get(name, 0.0)):>7}")

    lines += ["", "Per layer"]
    for layer in report.layers:
        lines.append(f"  {layer.index}:{layer.kind:<16} neurons={layer.neurons} rnas={layer.rnas} "
                     f"passes={layer.passes} latency={layer.latency_cycles:.1f} cycles")
    return "\n".join(lines) + "\n"


def write_sim_text(report, path):
    with open(path, 'w') as f:
        f.write(format_sim_text(report))
    logger.info(f"💾 Wrote simulation summary to {path}")
    return path


def _table(header, rows):
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return out


def format_summary(rm=None, reinterpret_report=None, sim_report=None, sweep_rows=None,
                   baseline_error=None, title="RAPIDNN experiment"):
    """Markdown summary; every figure comes from one of the passed reports"""
    lines = [f"# {title}", ""]

    if baseline_error is not None:
        lines += [f"Baseline test error: {baseline_error:.4f}", ""]

    if reinterpret_report is not None:
        lines += ["## Reinterpretation", ""]
        lines += _table(["iteration", "e_clustered", "e_baseline", "delta_e"],
                        [(r.iteration, f"{r.e_clustered:.4f}", f"{r.e_baseline:.4f}", f"{r.delta:+.4f}")
                         for r in reinterpret_report.iterations])
        lines += ["", f"Best iteration {reinterpret_report.best_iteration}, "
                      f"converged: {reinterpret_report.converged}", ""]

    if rm is not None:
        lines += ["## Memory", "", MEMORY_FORMULA, ""]
        lines += _table(["layer", "tables", "codebooks", "activation", "encoding", "total"],
                        [(r['layer'], r['tables'], r['codebooks'], r['activation'], r['encoding'], r['total'])
                         for r in memory_breakdown(rm)])
        lines += ["", f"Total: {report_memory(rm)} bytes", ""]

    if sim_report is not None:
        energy = check_shares(sim_report.energy_shares, 'energy')
        time = check_shares(sim_report.time_shares, 'time')
        lines += ["## Energy and time breakdown", ""]
        lines += _table(["block class", "energy (J)", "energy share", "time share"],
                        [(k, f"{sim_report.energy_j[k]:.4e}", _percent(energy[k]), _percent(time.get(k, 0.0)))
                         for k in sim_report.energy_j])
        lines += ["", f"Published accumulation share: {PUBLISHED_ENERGY_SHARES['accumulation_fc']}% "
                      f"(FC models), {PUBLISHED_ENERGY_SHARES['accumulation_conv']}% (conv models); "
                      f"pooling {PUBLISHED_ENERGY_SHARES['pooling']}% of energy and {PUBLISHED_TIME_SHARES['pooling']}% "
                      f"of time, other blocks {PUBLISHED_ENERGY_SHARES['other']}% of energy and "
                      f"{PUBLISHED_TIME_SHARES['other']}% of time", ""]

        total_area = math.fsum(sim_report.area_breakdown.values())
        area_shares = check_shares({k: v / total_area for k, v in sim_report.area_breakdown.items()}, 'area')
        lines += ["## Area breakdown", ""]
        lines += _table(["block", "area (mm2)", "share"],
                        [(k, f"{v:.3f}", _percent(area_shares[k])) for k, v in sim_report.area_breakdown.items()])
        lines += ["", "Published split: " + ", ".join(f"{k} {v}%" for k, v in PUBLISHED_AREA_SHARES.items()), ""]

        lines += ["## Efficiency", ""]
        lines += _table(["design", "source", "GOP/s/mm2", "GOP/s/W"],
                        [(r['design'], r['source'], f"{r['gops_per_mm2']:.4g}", f"{r['gops_per_w']:.4g}")
                         for r in compare_reference(sim_report)])
        lines += ["", "Max pooling (4x4): NDCAM "
                      f"{NDCAM_POOLING['area_um2']} um2 / {NDCAM_POOLING['latency_ns']} ns / "
                      f"{NDCAM_POOLING['energy_fj']} fJ, CMOS {CMOS_POOLING['area_um2']} um2 / "
                      f"{CMOS_POOLING['latency_ns']} ns / {CMOS_POOLING['energy_fj']} fJ (published)", ""]

    if sweep_rows:
        lines += ["## Sweep", ""]
        lines += _table(["w", "u", "q", "seed", "delta_e", "energy (J)", "cycles", "EDP", "memory"],
                        [(r.w, r.u, r.q, r.seed, f"{r.delta_e:+.4f}", f"{r.energy_j:.4e}", r.cycles,
                          f"{r.edp:.4e}", r.memory_bytes) for r in sweep_rows])
        lines += ["", "## Accuracy / efficiency trade-off", ""]
        lines += _table(["delta_e budget", "w", "u", "q", "delta_e", "EDP ratio", "memory ratio"],
                        [("min" if p['threshold'] is None else _percent(p['threshold']), p['row'].w, p['row'].u,
                          p['row'].q, f"{p['row'].delta_e:+.4f}", f"{p['edp_ratio']:.3f}",
                          f"{p['memory_ratio']:.3f}") for p in edp_tradeoff(sweep_rows)])
        lines.append("")

    return "\n".join(lines)


def write_summary(path, **kwargs):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        f.write(format_summary(**kwargs))
    logger.info(f"💾 Wrote summary to {path}")
    return path

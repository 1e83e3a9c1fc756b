"""
Versioned on-disk containers for trained networks and reinterpreted models

Layout of both containers:
    magic line, one-line JSON header, newline, little-endian binary blob.
The header lists each tensor's name, dtype, shape and byte offset in the blob.
"""
import json
import logging
import os

import numpy as np

from models import (
    ActivationLUT,
    Codebook,
    CodebookTree,
    ComposedLayer,
    LayerSpec,
    Network,
    ReinterpretedModel,
)
from network import check_network
from validators import ValidationError

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"RAPIDNN-MODEL\n"
RM_MAGIC = b"RAPIDNN-RM\n"
FORMAT_VERSION = 1


class ModelFormatError(ValidationError):
    """Container has the wrong magic, version or size"""
    pass


def _write_container(path, magic, header, tensors):
    blob = bytearray()
    manifest = []
    for name, array in tensors:
        dtype = '<i8' if np.issubdtype(array.dtype, np.integer) else '<f8'
        data = np.ascontiguousarray(array, dtype=dtype)
        manifest.append({'name': name, 'dtype': dtype, 'shape': list(data.shape), 'offset': len(blob)})
        blob += data.tobytes()

    header = dict(header, version=FORMAT_VERSION, tensors=manifest, blob_bytes=len(blob))

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(magic)
        f.write(json.dumps(header, sort_keys=True).encode('utf-8'))
        f.write(b"\n")
        f.write(bytes(blob))

    return len(blob)


def _read_container(path, magic):
    with open(path, 'rb') as f:
        raw = f.read()

    if not raw.startswith(magic):
        raise ModelFormatError(f"{path}: missing {magic.strip().decode()} magic")

    end = raw.find(b"\n", len(magic))
    if end < 0:
        raise ModelFormatError(f"{path}: header line is not terminated")

    try:
        header = json.loads(raw[len(magic):end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"{path}: unreadable header ({e})")

    version = header.get('version')
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: container version {version} is not supported (expected {FORMAT_VERSION})")

    blob = raw[end + 1:]
    if len(blob) != header.get('blob_bytes'):
        raise ModelFormatError(f"{path}: blob has {len(blob)} bytes, header declares {header.get('blob_bytes')}")

    tensors = {}
    for entry in header.get('tensors', []):
        try:
            name, shape, offset = entry['name'], entry['shape'], int(entry['offset'])
            dtype = np.dtype(entry['dtype'])
            count = int(np.prod(shape, dtype=np.int64))
        except (KeyError, TypeError) as e:
            raise ModelFormatError(f"{path}: malformed tensor entry, missing or invalid {e}")
        if offset + count * dtype.itemsize > len(blob):
            raise ModelFormatError(f"{path}: tensor {name} runs past the end of the blob")
        data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        tensors[name] = data.reshape(shape).astype(dtype.newbyteorder('='))

    return header, tensors


def save_model(net, path):
    """Write a trained network; weights keep float64 bits exactly"""
    if not net.layers:
        raise ModelFormatError("Refusing to save an empty network")

    tensors = []
    for i, layer in enumerate(net.layers):
        if layer.has_weights:
            tensors.append((f"weights.{i}", net.weights[i]))
            tensors.append((f"bias.{i}", net.biases[i]))

    size = _write_container(path, MODEL_MAGIC, {'layers': [layer.to_dict() for layer in net.layers]}, tensors)
    logger.info(f"💾 Saved network with {len(net.layers)} layers ({size} weight bytes) to {path}")
    return path


def load_model(path):
    header, tensors = _read_container(path, MODEL_MAGIC)
    try:
        layers = [LayerSpec.from_dict(d) for d in header.get('layers', [])]
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"{path}: malformed layer entry, missing or invalid {e}")
    if not layers:
        raise ModelFormatError(f"{path}: container holds no layers")

    weights = []
    biases = []
    for i, layer in enumerate(layers):
        if layer.has_weights:
            try:
                weights.append(tensors[f"weights.{i}"])
                biases.append(tensors[f"bias.{i}"])
            except KeyError as e:
                raise ModelFormatError(f"{path}: missing tensor {e}")
        else:
            weights.append(None)
            biases.append(None)

    net = check_network(Network(layers=layers, weights=weights, biases=biases))
    logger.info(f"📂 Loaded network with {len(layers)} layers from {path}")
    return net


def save_reinterpreted(rm, path):
    """Write a reinterpreted model: JSON manifest of codebooks and LUTs plus binary tables"""
    if not rm.layers:
        raise ModelFormatError("Refusing to save an empty reinterpreted model")

    layers = []
    tensors = []
    for pos, layer in enumerate(rm.layers):
        layers.append({
            'index': layer.index,
            'spec': layer.spec.to_dict(),
            'weight_trees': [tree.to_dict() for tree in layer.weight_trees],
            'weight_codebooks': [cb.to_dict() for cb in layer.weight_codebooks],
            'input_tree': layer.input_tree.to_dict() if layer.input_tree else None,
            'input_size': layer.input_size,
            'activation_lut': layer.activation_lut.to_dict() if layer.activation_lut else None,
            'relu_comparator': layer.relu_comparator,
        })
        for name in ('weight_codes', 'product_tables', 'bias'):
            value = getattr(layer, name)
            if value is not None:
                tensors.append((f"layer{pos}.{name}", value))

    header = {'model': rm.to_dict(), 'composed_layers': layers}
    size = _write_container(path, RM_MAGIC, header, tensors)
    logger.info(f"💾 Saved reinterpreted model (w={rm.w}, u={rm.u}, q={rm.q}, {size} table bytes) to {path}")
    return path


def _composed_layer(pos, data, tensors):
    return ComposedLayer(
        index=data['index'],
        spec=LayerSpec.from_dict(data['spec']),
        weight_trees=[CodebookTree.from_dict(t) for t in data['weight_trees']],
        weight_codebooks=[Codebook.from_dict(c) for c in data['weight_codebooks']],
        weight_codes=tensors.get(f"layer{pos}.weight_codes"),
        product_tables=tensors.get(f"layer{pos}.product_tables"),
        bias=tensors.get(f"layer{pos}.bias"),
        input_tree=CodebookTree.from_dict(data['input_tree']) if data['input_tree'] else None,
        input_size=data['input_size'],
        activation_lut=ActivationLUT.from_dict(data['activation_lut']) if data['activation_lut'] else None,
        relu_comparator=data['relu_comparator'],
    )


def load_reinterpreted(path):
    header, tensors = _read_container(path, RM_MAGIC)
    try:
        model = header['model']
        layers = [_composed_layer(pos, data, tensors) for pos, data in enumerate(header['composed_layers'])]
        rm = ReinterpretedModel(
            input_dims=tuple(model['input_dims']),
            layers=layers,
            w=model['w'],
            u=model['u'],
            q=model['q'],
            tree_depth=model['tree_depth'],
            frac_bits=model['frac_bits'],
        )
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"{path}: malformed header, missing or invalid {e}")

    logger.info(f"📂 Loaded reinterpreted model with {len(layers)} layers from {path}")
    return rm

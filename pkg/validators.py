"""
Input validation for experiment configs and artifact plumbing
"""
import math
import os


class ValidationError(Exception):
    """Raised when an input, config value or artifact is rejected"""
    pass


def validate_positive_int(name, value, allow_zero=False):
    """Validate an integer count such as epochs or batch size"""
    try:
        number = int(str(value).strip())
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be an integer, got {value!r}")

    if number < 0 or (number == 0 and not allow_zero):
        bound = "non-negative" if allow_zero else "positive"
        raise ValidationError(f"{name} must be {bound}, got {number}")

    return number


def validate_real(name, value, minimum=None, maximum=None, allow_inf=False):
    """Validate a real number, optionally bounded (bounds inclusive)"""
    try:
        number = float(str(value).strip())
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}")

    if math.isnan(number) or (math.isinf(number) and not allow_inf):
        raise ValidationError(f"{name} must be finite, got {value!r}")

    if minimum is not None and number < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {number}")

    if maximum is not None and number > maximum:
        raise ValidationError(f"{name} must be <= {maximum}, got {number}")

    return number


def validate_fraction(name, value, include_zero=False, include_one=True):
    """Validate a fraction in (0, 1] by default"""
    number = validate_real(name, value)

    low_ok = number >= 0 if include_zero else number > 0
    high_ok = number <= 1 if include_one else number < 1
    if not (low_ok and high_ok):
        low = "[0" if include_zero else "(0"
        high = "1]" if include_one else "1)"
        raise ValidationError(f"{name} must be in {low}, {high}, got {number}")

    return number


def validate_power_of_two(name, value, maximum=None):
    """Validate codebook/LUT sizes (w, u, q)"""
    number = validate_positive_int(name, value)

    if number & (number - 1):
        raise ValidationError(f"{name} must be a power of two, got {number}")

    if maximum is not None and number > maximum:
        raise ValidationError(f"{name} must be <= {maximum}, got {number}")

    return number


def validate_choice(name, value, choices):
    """Validate an enumerated option"""
    text = str(value).strip().lower()
    if text not in choices:
        raise ValidationError(f"{name} must be one of {', '.join(choices)}, got {value!r}")
    return text


def validate_bool(name, value):
    """Validate a yes/no flag"""
    if isinstance(value, bool):
        return value

    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False

    raise ValidationError(f"{name} must be true or false, got {value!r}")


def validate_int_list(name, value, item_validator=None):
    """Validate a comma separated list of integers, e.g. '4,16,64'"""
    if value is None or not str(value).strip():
        raise ValidationError(f"{name} must list at least one value")

    items = []
    for part in str(value).split(','):
        if item_validator:
            items.append(item_validator(name, part))
        else:
            items.append(validate_positive_int(name, part, allow_zero=True))

    return items


def validate_existing_path(name, path):
    """Validate that a referenced file exists"""
    if not path:
        raise ValidationError(f"{name} is required")

    if not os.path.exists(path):
        raise ValidationError(f"{name} points to a missing file: {path}")

    return path


def validate_dims(name, value):
    """Validate a shape written as '784' or '3x8x8'"""
    text = str(value).strip().lower()
    if not text:
        raise ValidationError(f"{name} is required")

    dims = []
    for part in text.split('x'):
        dims.append(validate_positive_int(name, part))

    if len(dims) not in (1, 3):
        raise ValidationError(f"{name} must be a flat size or CxHxW, got {value!r}")

    return tuple(dims)

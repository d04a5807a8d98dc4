"""
Display utilities for the stdout reports of the command line.

Includes:
- format_value(): Converts numbers, percentages and tiny rates to
    human-readable strings
- safe_entry(): Returns a report entry dict, with a fallback for empty values.
- render_report(): Renders a titled block of "label: value" lines.
"""

import math
import numbers
from typing import Any, Dict, List, Optional


def format_value(
    value: Any,
    value_type: str = "number",
    accuracy: float = 0.01
) -> str:
    """
    Format a value for display. Supports:
    - 'number': comma-grouped integer, or float rounded to accuracy
    - 'float': float with dynamic precision
    - 'percent': percentage
    - 'sci': scientific notation with accuracy-derived significant digits

    Parameters:
        value: Numeric input
        value_type: Display type ('number', 'float', 'percent', 'sci')
        accuracy: Rounding precision (e.g. 0.01 -> round to hundredths)

    Returns:
        str: Formatted string for display
    """
    if value_type not in {"number", "float", "percent", "sci"}:
        raise ValueError(f"Unsupported value_type: {value_type}")

    if value is None or isinstance(value, bool) or not isinstance(value, numbers.Number):
        return "NA"
    value = float(value)
    if math.isnan(value):
        return "NA"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"

    try:
        decimal_places = max(0, -int(round(math.log10(accuracy))))
    except ValueError:
        decimal_places = 2

    if value_type == "percent":
        return f"{value * 100:.{decimal_places}f}%"

    if value_type == "sci":
        return f"{value:.{max(decimal_places, 1)}e}"

    if value_type == "number" and value.is_integer():
        return f"{int(value):,}"

    return f"{value:,.{decimal_places}f}"


def safe_entry(label: str, value: Any, value_type: str = "float",
               accuracy: float = 0.0001) -> Dict[str, str]:
    """
    Return a report entry dict.
    Falls back to "No data available" for None, empty string, or NaN.
    """
    if value is None or value == "" or (isinstance(value, float) and math.isnan(value)):
        display = "No data available"
    elif isinstance(value, (str, bool)):
        display = str(value)
    else:
        display = format_value(value, value_type, accuracy)
    return {"label": label, "value": display}


def render_report(title: str, entries: List[Dict[str, str]], footer: Optional[str] = None) -> str:
    """Title line, one indented line per entry, optional footer."""
    lines = [title]
    width = max((len(e["label"]) for e in entries), default=0)
    lines += [f"  {e['label']:<{width}}  {e['value']}" for e in entries]
    if footer:
        lines.append(footer)
    return "\n".join(lines)

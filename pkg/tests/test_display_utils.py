# tests/test_display_utils.py

import math

import pytest
from services.display_utils import format_value, render_report, safe_entry

def test_format_value_percent():
    """Test formatting a numeric value as a percentage."""
    assert format_value(0.1234, value_type="percent") == "12.34%"

def test_format_value_number():
    """Test formatting a large number with comma separators."""
    assert format_value(1000000, value_type="number") == "1,000,000"

def test_format_value_float():
    """Test formatting a float with default precision."""
    assert format_value(1234.567, value_type="float") == "1,234.57"

def test_format_value_sci():
    """Tiny rates render in scientific notation."""
    assert format_value(0.000123, value_type="sci") == "1.23e-04"

def test_format_value_invalid_type():
    """Test that an invalid value_type raises a ValueError."""
    with pytest.raises(ValueError):
        format_value(100, value_type="dollar")

@pytest.mark.parametrize("value", [None, "abc", math.nan, True])
def test_format_value_not_a_number(value):
    """Non-numeric inputs and NaN render as NA."""
    assert format_value(value) == "NA"

def test_format_value_infinite():
    """Infinite privacy losses render as inf."""
    assert format_value(math.inf) == "inf"

def test_safe_entry_valid():
    """Test safe_entry returns correct label and value."""
    entry = safe_entry("threshold", 1.23456)
    assert entry["label"] == "threshold"
    assert entry["value"] == "1.2346"

def test_safe_entry_passes_strings_and_bools():
    """Strings and booleans are shown as-is."""
    assert safe_entry("protocol", "sign -> sum_of_bits")["value"] == "sign -> sum_of_bits"
    assert safe_entry("holds", True)["value"] == "True"

def test_safe_entry_missing():
    """Test safe_entry returns fallback for missing value."""
    assert safe_entry("risk", None)["value"] == "No data available"
    assert safe_entry("risk", math.nan)["value"] == "No data available"

def test_render_report_layout():
    """Labels are left-aligned to a common width under the title."""
    text = render_report("Title", [safe_entry("a", 1.0), safe_entry("long label", 2.0)], "note")
    lines = text.split("\n")

    assert lines[0] == "Title"
    assert lines[1] == "  a           1.0000"
    assert lines[2] == "  long label  2.0000"
    assert lines[3] == "note"

"""Report rendering: text table, CSV and spreadsheet."""
from __future__ import annotations

import io
import json
import logging
import math
from pathlib import Path
from typing import List

import pandas as pd

logger = logging.getLogger(__name__)

FORMATS = ("table", "csv", "xlsx")
FLOAT_FORMAT = "%.6f"


def _cell(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    return str(value)


def _fixed(df: pd.DataFrame) -> pd.DataFrame:
    """Floats with 6 decimals, missing values blank."""
    return df.map(_cell)


def format_table(df: pd.DataFrame) -> str:
    if df.empty and not len(df.columns):
        return ""
    return _fixed(df).to_string(index=False)


def format_csv(df: pd.DataFrame) -> str:
    buf = io.StringIO()
    _fixed(df).to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def records(df: pd.DataFrame) -> List[dict]:
    """JSON-safe rows (numpy scalars converted, NaN as null)."""
    return json.loads(df.to_json(orient="records"))


def write_xlsx(df: pd.DataFrame, path, title: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    startrow = 2
    with pd.ExcelWriter(path, engine="xlsxwriter") as writer:
        df.to_excel(writer, index=False, sheet_name="Report", startrow=startrow)
        workbook = writer.book
        worksheet = writer.sheets["Report"]

        title_fmt = workbook.add_format({"bold": True, "align": "left", "font_size": 12})
        header_fmt = workbook.add_format({"bold": True, "border": 1, "align": "center"})
        number_fmt = workbook.add_format({"num_format": "0.000000", "border": 1, "align": "right"})
        text_fmt = workbook.add_format({"border": 1, "align": "left"})

        worksheet.write(0, 0, title, title_fmt)
        for col_idx, col in enumerate(df.columns):
            worksheet.write(startrow, col_idx, col, header_fmt)
            max_len = max(df[col].astype(str).map(len).max() if len(df) else 0, len(str(col))) + 2
            is_number = pd.api.types.is_numeric_dtype(df[col])
            worksheet.set_column(col_idx, col_idx, min(max(max_len, 12), 40),
                                 number_fmt if is_number else text_fmt)
    logger.info("Wrote %s report to %s", title, path)
    return path

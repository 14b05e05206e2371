"""HTML evaluation report generator."""

import logging
import math
from pathlib import Path
from typing import Optional, Union

from jinja2 import Environment, FileSystemLoader

from .models import EvalVariant, EvaluationTable

logger = logging.getLogger(__name__)

# Singleton instance for ReportGenerator
_report_generator_instance = None

# Row labels in the results-table layout
APPROACH_LABELS = {
    EvalVariant.BASELINE: "Codec",
    EvalVariant.POST: "Codec + Post",
    EvalVariant.POST_ROTATION: "Codec + Post + Rotation",
}


class ReportGenerator:
    """Renders evaluation tables to standalone HTML."""

    def __init__(self):
        templates_path = Path(__file__).parent / "templates"
        self.env = Environment(
            loader=FileSystemLoader(str(templates_path)),
            autoescape=True,
        )

        # Add custom filters
        self.env.filters["format_db"] = self.format_db
        self.env.filters["format_ratio"] = self.format_ratio
        self.env.filters["approach"] = self.approach

    @staticmethod
    def format_db(value: Optional[float]) -> str:
        """PSNR in dB with two decimals; identical images show as infinity."""
        if value is None:
            return "-"
        if math.isinf(value):
            return "∞"
        return f"{value:.2f}"

    @staticmethod
    def format_ratio(value: Optional[float], digits: int = 4) -> str:
        if value is None:
            return "-"
        return f"{value:.{digits}f}"

    @staticmethod
    def approach(variant: EvalVariant) -> str:
        return APPROACH_LABELS.get(variant, str(variant))

    def render(self, table: EvaluationTable, title: str = "Post-processing evaluation", codec: str = "") -> str:
        template = self.env.get_template("eval_report.html")
        return template.render(
            title=title,
            codec=codec,
            image_count=len({row.image for row in table.rows}),
            means=table.means,
            rows=table.rows,
        )

    def generate(
        self,
        table: EvaluationTable,
        path: Union[str, Path],
        title: str = "Post-processing evaluation",
        codec: str = "",
    ) -> str:
        """Write the HTML report and return its path."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render(table, title=title, codec=codec), encoding="utf-8")
        logger.info(f"Evaluation report written: {path}")
        return str(path)


def get_report_generator() -> "ReportGenerator":
    """Get singleton ReportGenerator instance to cache Jinja2 environment."""
    global _report_generator_instance
    if _report_generator_instance is None:
        _report_generator_instance = ReportGenerator()
    return _report_generator_instance


def render_evaluation_report(
    table: EvaluationTable,
    path: Union[str, Path],
    title: str = "Post-processing evaluation",
    codec: str = "",
) -> str:
    return get_report_generator().generate(table, path, title=title, codec=codec)

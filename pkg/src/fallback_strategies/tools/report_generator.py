"""
纯文本报告生成器
"""

import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import aiofiles
from jinja2 import Environment, StrictUndefined

from ..models.results import (
    EvalReport, FallbackCertificate, FeasibilityReport, OracleReport, OracleResult, PerturbationComparison,
    SweepResult,
)
from ..utils.helpers import sanitize_filename


ORACLE_TEMPLATE = """\
Exact oracle report
===================
{% for name, r in strategies %}
[{{ name }}]
  value (gamma={{ r.gamma }})    : {{ r.value | num }}
  outcome                  : {{ r.outcome }} after {{ r.steps }} steps
  crossing class           : {{ r.crossing_class }}
  ego crossing time        : {{ r.ego_crossing_time | num }} s
  target crossing times    : {{ r.target_crossing_times | join_nums }} s
{% endfor %}
{% if gap is not none %}unconstrained - constrained value gap: {{ gap | num }}
{% endif %}"""

EVAL_TEMPLATE = """\
Evaluation: {{ r.policy_id }}
{{ "=" * (12 + r.policy_id | length) }}
episodes                 : {{ r.episodes }}
return (mean/min/max)    : {{ r.mean_return | num }} / {{ r.min_return | num }} / {{ r.max_return | num }}
discounted return (mean) : {{ r.mean_discounted_return | num }}
goal / collision / timeout: {{ r.goal_rate | pct }} / {{ r.collision_rate | pct }} / {{ r.timeout_rate | pct }}
mean length              : {{ r.mean_length | num }}
min clearance            : {{ r.min_clearance | num }} m
{% for cls, n in r.crossing_classes | dictsort %}crossing {{ cls }}: {{ n }}
{% endfor %}{% for name, m in r.reference_metrics | dictsort %}metric vs {{ name }}: {{ m | num }}
{% endfor %}"""

COMPARISON_TEMPLATE = """\
Perturbation comparison (target {{ c.target }}, radius x{{ c.factor }})
=======================================================
policy     base return  perturbed return  delta     collision delta
optimal    {{ "%11.4f" | format(c.optimal_base.mean_return) }}  {{ "%16.4f" | format(c.optimal_perturbed.mean_return) }}  {{ "%8.4f" | format(c.optimal_return_delta) }}  {{ "%+.2f" | format(c.optimal_collision_delta) }}
fallback   {{ "%11.4f" | format(c.fallback_base.mean_return) }}  {{ "%16.4f" | format(c.fallback_perturbed.mean_return) }}  {{ "%8.4f" | format(c.fallback_return_delta) }}  {{ "%+.2f" | format(c.fallback_collision_delta) }}
{% if cert %}
fallback certificate
  valid                  : {{ cert.valid }}
  sub-optimal (eps={{ cert.epsilon }})  : {{ cert.suboptimal }} (gap {{ cert.value_gap | num }})
  adjusted sub-optimal   : {{ cert.adjusted_suboptimal }}
  sufficiently different : {{ cert.sufficiently_different }} (M={{ cert.metric | num }}, d={{ cert.difference_threshold }})
{% endif %}"""

SWEEP_TEMPLATE = """\
Alpha sweep
===========
alpha    M(episodes)  M(pooled)  eval return  collision
{% for row in s.rows %}{{ "%-8g" | format(row.alpha) }} {{ "%11s" | format(row.mean_metric_episodes | num) }}  {{ "%9s" | format(row.mean_metric_pooled | num) }}  {{ "%11s" | format(row.eval_return | num) }}  {% if row.error %}FAILED: {{ row.error }}{% else %}{{ row.eval_collision_rate | pct }}{% endif %}
{% endfor %}
max adjacent jump: episodes {{ s.max_adjacent_jump("episodes") | num }}, pooled {{ s.max_adjacent_jump("pooled") | num }}
"""

FEASIBILITY_TEMPLATE = """\
Feasibility scan: {{ f.scripts | length }} scripts
{% for cls, n in f.class_members | dictsort %}  {{ cls }}: {{ n }} clean scripts
{% endfor %}"""


def _num(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.4f}"


def _pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{100 * value:.1f}%"


class TextReportGenerator:
    """Renders result models into plain-text reports"""

    def __init__(self):
        self.env = Environment(undefined=StrictUndefined, keep_trailing_newline=True)
        self.env.filters["num"] = _num
        self.env.filters["pct"] = _pct
        self.env.filters["join_nums"] = lambda values: ", ".join(_num(v) for v in values) or "-"
        self.templates = {
            "oracle": self.env.from_string(ORACLE_TEMPLATE),
            "eval": self.env.from_string(EVAL_TEMPLATE),
            "comparison": self.env.from_string(COMPARISON_TEMPLATE),
            "sweep": self.env.from_string(SWEEP_TEMPLATE),
            "feasibility": self.env.from_string(FEASIBILITY_TEMPLATE),
        }

    def render_oracle(self, report: Union[OracleReport, Sequence[OracleResult]],
                      feasibility: Optional[FeasibilityReport] = None) -> str:
        if isinstance(report, OracleReport):
            results = [report.unconstrained, report.constrained]
            gap = report.unconstrained.value - report.constrained.value
        else:
            results, gap = list(report), None
        text = self.templates["oracle"].render(
            strategies=[("unconstrained" if r.constraint == "none" else r.constraint, r) for r in results],
            gap=gap,
        )
        if feasibility is not None:
            text += "\n" + self.templates["feasibility"].render(f=feasibility)
        return text

    def render_eval(self, report: EvalReport) -> str:
        return self.templates["eval"].render(r=report)

    def render_comparison(self, comparison: PerturbationComparison,
                          certificate: Optional[FallbackCertificate] = None) -> str:
        return self.templates["comparison"].render(c=comparison, cert=certificate)

    def render_sweep(self, sweep: SweepResult) -> str:
        return self.templates["sweep"].render(s=sweep)

    async def save_report(self, content: str, directory: Union[str, Path], name: str) -> Path:
        """
        保存报告到文件

        Args:
            content: 报告文本
            directory: 输出目录
            name: 报告名称 (会附加时间戳)

        Returns:
            Path: 报告文件路径
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        file_path = directory / f"{sanitize_filename(name)}_{timestamp}.txt"
        # 异步写入文件
        async with aiofiles.open(file_path, "w", encoding="utf-8") as f:
            await f.write(content)
        return file_path

    def summary(self, report: EvalReport) -> Dict[str, Any]:
        return {
            "policy_id": report.policy_id,
            "mean_return": report.mean_return,
            "collision_rate": report.collision_rate,
            "goal_rate": report.goal_rate,
        }

"""CSV de métricas (único destino das métricas) e agregação da curva
compressão x acurácia."""
from pathlib import Path
from typing import Iterable, List, Union

import pandas as pd

from ..models.report_models import METRIC_COLUMNS, EpochMetrics, TradeoffRow

METRICS_FILE = "metrics.csv"


class MetricsSink:
    """Acrescenta linhas ao CSV; o cabeçalho é escrito na primeira vez"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, rows: Iterable[EpochMetrics]) -> int:
        frame = pd.DataFrame([row.as_row() for row in rows], columns=METRIC_COLUMNS)
        if frame.empty:
            return 0
        write_header = not self.path.exists() or self.path.stat().st_size == 0
        frame.to_csv(self.path, mode="a", header=write_header, index=False)
        return len(frame)

    def read(self) -> pd.DataFrame:
        return pd.read_csv(self.path)


def read_metrics(directory: Union[str, Path]) -> pd.DataFrame:
    """Junta todos os `metrics.csv` sob `directory` (recursivo)."""
    paths = sorted(Path(directory).rglob("*.csv"))
    frames = [pd.read_csv(p) for p in paths]
    frames = [f for f in frames if set(METRIC_COLUMNS).issubset(f.columns)]
    if not frames:
        raise FileNotFoundError(f"nenhum CSV de métricas em {directory}")
    return pd.concat(frames, ignore_index=True)


def summarize_tradeoff(metrics: pd.DataFrame) -> List[TradeoffRow]:
    """Linhas finais agrupadas por C: mediana da compressão e min/mediana/max da acurácia."""
    final = metrics[metrics["stage"] == "final"]
    if final.empty:
        raise ValueError("nenhuma linha final nas métricas")
    grouped = final.groupby("C").agg(
        runs=("accuracy", "size"),
        compression_rate=("compression_rate", "median"),
        accuracy_min=("accuracy", "min"),
        accuracy_median=("accuracy", "median"),
        accuracy_max=("accuracy", "max"),
    )
    grouped = grouped.reset_index().sort_values(["compression_rate", "C"], kind="mergesort")
    rows = []
    for record in grouped.to_dict(orient="records"):
        record["runs"] = int(record["runs"])
        rows.append(TradeoffRow(**record))
    return rows

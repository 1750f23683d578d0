from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd
from crewai.tools import BaseTool

from ..core.metrics import read_metrics, summarize_tradeoff
from ..models.report_models import TradeoffRow

TRADEOFF_CSV_FILE = "tradeoff.csv"
TRADEOFF_REPORT_FILE = "TRADEOFF_REPORT.md"


class TradeoffReportTool(BaseTool):
    name: str = "Compression Tradeoff Report Tool"
    description: str = (
        "Ferramenta para consolidar as linhas finais dos CSVs de métricas na curva "
        "compressão x acurácia (min/mediana/max por valor de C)."
    )

    def _run(self, metrics_dir: str, output_dir: str = "") -> Dict[str, Any]:
        """
        Gera a tabela de compromisso compressão x acurácia.

        Args:
            metrics_dir: Diretório com os CSVs de métricas (busca recursiva)
            output_dir: Destino do CSV e do relatório (padrão: metrics_dir)

        Returns:
            Tabela em texto, linhas agregadas e arquivos gerados
        """
        try:
            if not Path(metrics_dir).is_dir():
                return {
                    "success": False,
                    "error": f"Diretório de métricas não encontrado: {metrics_dir}"
                }
            rows = summarize_tradeoff(read_metrics(metrics_dir))
            target = Path(output_dir or metrics_dir)
            target.mkdir(parents=True, exist_ok=True)

            table = pd.DataFrame([row.model_dump() for row in rows])
            csv_file = target / TRADEOFF_CSV_FILE
            table.to_csv(csv_file, index=False)

            report_file = target / TRADEOFF_REPORT_FILE
            report_file.write_text(self._generate_markdown_report(rows, metrics_dir), encoding="utf-8")

            return {
                "success": True,
                "table": table.to_string(index=False),
                "rows": [row.model_dump() for row in rows],
                "csv_file": str(csv_file),
                "report_file": str(report_file),
            }
        except Exception as e:
            return {
                "success": False,
                "error": f"Erro na geração do relatório: {str(e)}"
            }

    def _generate_markdown_report(self, rows: List[TradeoffRow], metrics_dir: str) -> str:
        """Gera o conteúdo do relatório em formato Markdown."""
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        total_runs = sum(row.runs for row in rows)
        best = max(rows, key=lambda row: row.accuracy_median)

        report = f"""# Relatório de Compressão x Acurácia

**Data/Hora**: {timestamp}
**Métricas**: `{metrics_dir}`
**Execuções finais**: {total_runs}

## 📊 Resumo

| Métrica | Valor |
|---------|-------|
| **Valores de C** | {len(rows)} |
| **Maior compressão (mediana)** | x{rows[-1].compression_rate:.2f} |
| **Melhor acurácia mediana** | {best.accuracy_median:.4f} (C={best.C:g}, x{best.compression_rate:.2f}) |

## 📋 Curva por valor de C

| C | Execuções | Compressão (mediana) | Acurácia min | Acurácia mediana | Acurácia max |
|---|-----------|----------------------|--------------|------------------|--------------|
"""
        for row in rows:
            report += (
                f"| {row.C:.6g} | {row.runs} | x{row.compression_rate:.2f} | {row.accuracy_min:.4f} "
                f"| {row.accuracy_median:.4f} | {row.accuracy_max:.4f} |\n"
            )

        report += """
---
*Relatório gerado automaticamente a partir de metrics.csv*
"""
        return report

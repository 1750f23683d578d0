from pathlib import Path
from typing import Any, Dict

import pandas as pd
from crewai.tools import BaseTool

from ..core.verification import gradcheck_passed, gradcheck_sweep, max_rel_error, verify_kl, verify_lrt
from ..models.config_models import PenaltyKind

KL_REPORT_FILE = "kl_verification.csv"
LRT_REPORT_FILE = "lrt_verification.csv"
GRADCHECK_REPORT_FILE = "gradcheck.csv"


def _write_rows(rows, output_dir, filename: str) -> str:
    path = Path(output_dir)
    path.mkdir(parents=True, exist_ok=True)
    target = path / filename
    pd.DataFrame([row.model_dump() for row in rows]).to_csv(target, index=False)
    return str(target)


class KLVerificationTool(BaseTool):
    name: str = "KL Penalty Verification Tool"
    description: str = (
        "Ferramenta para comparar as penalidades KL (RVD e CVD) e suas derivadas "
        "com estimativas Monte Carlo num grid de log alpha."
    )

    def _run(self, grid: int = 1024, samples: int = 100_000, seed: int = 0,
             output_dir: str = ".") -> Dict[str, Any]:
        """
        Executa a verificação e grava uma linha por ponto do grid.

        Args:
            grid: Número de pontos em [-12, 12]
            samples: Amostras MC por ponto
            seed: Semente do ruído
            output_dir: Diretório do CSV

        Returns:
            Resumo da verificação e caminho do CSV
        """
        try:
            report = verify_kl(grid=grid, samples=samples, seed=seed)
            csv_file = _write_rows(report.rows, output_dir, KL_REPORT_FILE)
            return {
                "success": True,
                "passed": report.passed,
                "summary": report.model_dump(exclude={"rows"}),
                "report_file": csv_file,
            }
        except Exception as e:
            return {
                "success": False,
                "error": f"Erro na verificação das penalidades KL: {str(e)}"
            }


class LRTVerificationTool(BaseTool):
    name: str = "Local Reparameterization Verification Tool"
    description: str = (
        "Ferramenta para comparar os momentos da saída de uma camada variacional "
        "complexa (reparametrização local) com a amostragem direta dos pesos."
    )

    def _run(self, penalty: str = "CVD", samples: int = 100_000, seed: int = 0,
             zero_variance: bool = False, output_dir: str = ".") -> Dict[str, Any]:
        """
        Executa a comparação de momentos e grava uma linha por comparação.

        Args:
            penalty: CVD, CARD ou RSCALE
            samples: Número de amostras
            seed: Semente
            zero_variance: Força variância nula (ramo de igualdade exata)
            output_dir: Diretório do CSV

        Returns:
            Resultado das comparações e caminho do CSV
        """
        try:
            report = verify_lrt(PenaltyKind(penalty.upper()), samples=samples, seed=seed,
                                zero_variance=zero_variance)
            csv_file = _write_rows(report.checks, output_dir, LRT_REPORT_FILE)
            failed = [c.check for c in report.checks if not c.passed]
            return {
                "success": True,
                "passed": report.passed,
                "exact_branch": report.exact_branch,
                "total_checks": len(report.checks),
                "failed_checks": failed,
                "report_file": csv_file,
            }
        except Exception as e:
            return {
                "success": False,
                "error": f"Erro na verificação do LRT: {str(e)}"
            }


class GradcheckTool(BaseTool):
    name: str = "Wirtinger Gradcheck Tool"
    description: str = (
        "Ferramenta para comparar gradientes analíticos com diferenças centrais em "
        "todas as combinações de camada e penalidade."
    )

    def _run(self, seed: int = 0, eps: float = 1e-6, tol: float = 1e-5,
             output_dir: str = ".") -> Dict[str, Any]:
        """Executa o gradcheck completo e grava uma linha por caso."""
        try:
            rows = gradcheck_sweep(seed=seed, eps=eps, tol=tol)
            csv_file = _write_rows(rows, output_dir, GRADCHECK_REPORT_FILE)
            return {
                "success": True,
                "passed": gradcheck_passed(rows),
                "max_rel_error": max_rel_error(rows),
                "rows": [row.model_dump() for row in rows],
                "report_file": csv_file,
            }
        except Exception as e:
            return {
                "success": False,
                "error": f"Erro no gradcheck: {str(e)}"
            }

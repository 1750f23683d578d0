#!/usr/bin/env python
import os
import sys
from pathlib import Path
from typing import Optional

import click

from cplx_sparse_vd.core.checkpoint import Checkpoint
from cplx_sparse_vd.core.data import load_splits
from cplx_sparse_vd.core.errors import CplxSparseError
from cplx_sparse_vd.flows.compression_flow import CompressionFlow, run_experiment
from cplx_sparse_vd.models.config_models import ExperimentConfig, load_experiment_config
from cplx_sparse_vd.tools import GradcheckTool, KLVerificationTool, LRTVerificationTool, TradeoffReportTool

CONFIG_DIR = Path(__file__).resolve().parent / "flows" / "compression_flow" / "config"
SYNTHETIC_CONFIG = CONFIG_DIR / "synthetic.yaml"
CONFIG_ENV = "CPLX_SPARSE_VD_CONFIG"


def _fail(message: str) -> None:
    click.echo(f"❌ {message}", err=True)
    sys.exit(1)


def _finish(result: dict, label: str) -> None:
    """Sai com código 0 só quando a ferramenta rodou e todas as tolerâncias passaram."""
    if not result.get("success"):
        _fail(result.get("error", f"{label}: falha desconhecida"))
    if not result.get("passed", True):
        click.echo(f"⚠️ {label}: tolerâncias não atendidas ({result['report_file']})")
        sys.exit(1)
    click.echo(f"✅ {label}: aprovado")
    click.echo(f"📄 Relatório: {result['report_file']}")


def train_experiment(config: ExperimentConfig, out: Optional[str] = None, resume: Optional[str] = None):
    """Carrega os dados e executa todas as replicações x valores de C."""
    output_dir = Path(out or config.output_dir)
    print(f"📁 Carregando dados ({config.dataset.source}, {config.dataset.features})...")
    train, test = load_splits(config.dataset, config.model.kind)
    checkpoint = Checkpoint.load(resume) if resume else None
    states = run_experiment(config, train, test, output_dir=output_dir, resume=checkpoint)
    print(f"🎉 {len(states)} execuções concluídas; métricas em {output_dir / 'metrics.csv'}")
    return states


@click.group()
def cli():
    """Redes complexas com esparsificação variacional."""


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Arquivo YAML do experimento")
@click.option("--out", default=None, help="Diretório de saída (sobrepõe output_dir)")
@click.option("--seed", type=int, default=None, help="Executa só esta replicação")
@click.option("--scale", type=float, default=1.0, show_default=True, help="Divisor da duração dos estágios")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Checkpoint a partir do qual retomar")
def train(config_path: str, out: Optional[str], seed: Optional[int], scale: float, resume: Optional[str]):
    """Executa pré-treino, esparsificação e ajuste fino."""
    overrides = {"replications": [seed]} if seed is not None else {}
    try:
        config = load_experiment_config(config_path, overrides).scaled(scale)
        click.echo(f"🚀 Experimento {config.config_hash()[:12]}: {len(config.replications)} replicações x {len(config.c_grid)} valores de C")
        train_experiment(config, out, resume)
    except (CplxSparseError, FileNotFoundError) as e:
        _fail(str(e))


@cli.command("verify-kl")
@click.option("--grid", type=int, default=1024, show_default=True, help="Pontos do grid de log alpha")
@click.option("--samples", type=int, default=100_000, show_default=True, help="Amostras MC")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=".", show_default=True, help="Diretório do CSV")
def verify_kl(grid: int, samples: int, seed: int, out: str):
    """Penalidades KL e derivadas contra Monte Carlo."""
    click.echo(f"🔬 Verificando penalidades KL ({grid} pontos, {samples} amostras)...")
    result = KLVerificationTool().run(grid=grid, samples=samples, seed=seed, output_dir=out)
    if result.get("success"):
        summary = result["summary"]
        click.echo(f"   fração exata vs MC a 3 EP: {summary['exact_vs_mc_fraction']:.4f}")
        click.echo(f"   desvio do offset CVD: {summary['cvd_offset_std']:.2e} (EP {summary['cvd_pooled_se']:.2e})")
    _finish(result, "verify-kl")


@cli.command("verify-lrt")
@click.option("--penalty", type=click.Choice(["CVD", "CARD", "RSCALE"], case_sensitive=False),
              default="CVD", show_default=True)
@click.option("--samples", type=int, default=100_000, show_default=True, help="Amostras")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--zero-variance", is_flag=True, help="Força variância nula (igualdade exata)")
@click.option("--out", default=".", show_default=True, help="Diretório do CSV")
def verify_lrt(penalty: str, samples: int, seed: int, zero_variance: bool, out: str):
    """Reparametrização local contra amostragem direta dos pesos."""
    click.echo(f"🔬 Verificando LRT {penalty.upper()} ({samples} amostras)...")
    result = LRTVerificationTool().run(penalty=penalty, samples=samples, seed=seed,
                                       zero_variance=zero_variance, output_dir=out)
    if result.get("success") and result["failed_checks"]:
        click.echo(f"   fora de 3 EP: {', '.join(result['failed_checks'])}")
    _finish(result, "verify-lrt")


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=".", show_default=True, help="Diretório do CSV")
def gradcheck(seed: int, out: str):
    """Gradientes analíticos contra diferenças centrais."""
    click.echo("🔬 Executando gradcheck em todas as camadas e penalidades...")
    result = GradcheckTool().run(seed=seed, output_dir=out)
    if result.get("success"):
        for row in result["rows"]:
            mark = "✅" if row["passed"] else "❌"
            click.echo(f"   {mark} {row['case']:<32} {row['penalty']:<7} {row['max_rel_error']:.2e}")
    _finish(result, "gradcheck")


@cli.command()
@click.argument("metrics_dir", type=click.Path(file_okay=False))
@click.option("--out", default="", help="Destino do CSV e do relatório (padrão: METRICS_DIR)")
def report(metrics_dir: str, out: str):
    """Curva compressão x acurácia a partir dos CSVs de métricas."""
    result = TradeoffReportTool().run(metrics_dir=metrics_dir, output_dir=out)
    if not result.get("success"):
        _fail(result["error"])
    click.echo(result["table"])
    click.echo(f"📄 Relatório: {result['report_file']}")


def kickoff():
    """Executa o experimento de `CPLX_SPARSE_VD_CONFIG` (ou o sintético embutido)"""
    config = load_experiment_config(os.environ.get(CONFIG_ENV, SYNTHETIC_CONFIG))
    train_experiment(config)


def plot():
    """Gera o plot do flow de compressão"""
    config = load_experiment_config(SYNTHETIC_CONFIG)
    train_set, test_set = load_splits(config.dataset, config.model.kind)
    compression_flow = CompressionFlow(config, train_set, test_set)
    compression_flow.plot()


if __name__ == "__main__":
    cli()

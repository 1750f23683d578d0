"""Núcleo numérico: tensores complexos, autograd, camadas variacionais,
poda, treinamento em estágios e verificações."""

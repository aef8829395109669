"""Fully quantized training of binary networks with packed-bit GEMM kernels.

Modules: ``bitpack`` (bit packing), ``binmm`` (XNOR/popcount GEMM),
``quant`` (unbiased per-group quantizers), ``agp`` (activation gradient
pruning), ``layers`` (binary linear/conv layers), ``optim`` (SGD/Adam and
regret), ``harness`` (experiments and CLI).
"""

__version__ = "0.1.0"

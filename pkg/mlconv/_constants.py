__name__ = "mlconv"
__version__ = '0.3.0'
__author__ = "mlconv developers"
__author_email__ = "mlconv@users.noreply.github.com"
__license__ = "MIT"
__summary__ = "Rank-R multilinear convolution filters with CP-ALS " \
              "kernel factorization, training engine and cost analyzer"
__keywords__ = "cnn convolution multilinear tensor cp-decomposition " \
               "kruskal low-rank compression numpy".split()

CP_ALS_MAX_ITERS = 200
CP_ALS_TOL = 1e-6
# kernel conversion runs to exact recovery on small d x d x C kernels
CONVERT_MAX_ITERS = 5000
CONVERT_TOL = 1e-12

LRELU_ALPHA = 0.2
BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99

BATCH_SIZE = 200
SGD_MOMENTUM = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

SC1 = (0.01, 0.005, 0.001, 0.0005, 0.0001)
SC2 = (0.01, 0.001, 0.0001)
E_GRID = (40, 50, 60, 100, 120)

CHECKPOINT_MAGIC = b'MLCV'
CHECKPOINT_VERSION = 1

BENCH_REPS = 30

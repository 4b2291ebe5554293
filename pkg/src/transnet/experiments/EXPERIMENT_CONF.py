DATA_KIND = "cifar"  # cifar | synthetic
NUM_CLASSES = 10
IMAGE_SIZE = 32
CHANNELS = 3
LABEL_BYTES = 1
TRAIN_FILES = "data_batch_*.bin"
TEST_FILE = "test_batch.bin"
SUBSAMPLE = 5000
TEST_SUBSAMPLE = 2000

SYNTHETIC_SAMPLES = 512
SYNTHETIC_TEST_SAMPLES = 128
SYNTHETIC_SIZE = 8
SYNTHETIC_NOISE = 0.05
SYNTHETIC_VARIATION = 0.15
SYNTHETIC_TRANSFORM = "mr2"  # vertical flip

SEEDS = (0, 1, 2)
OUTPUT_DIR = "runs"
ENSEMBLE_SIZE = 4
INVARIANCE_GROUP = "c4"
INVARIANCE_METRIC = "norm"
THREADS_ENV = "TNET_THREADS"
CHECKPOINT_NAME = "model.tnet"

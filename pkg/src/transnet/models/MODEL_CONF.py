CHANNELS = (3, 32, 64, 128, 128)  # input channels, then one entry per conv layer
KERNEL_SIZE = 3
POOL_AFTER = (True, True, False, False)  # 2x2 mean pooling after layers 1 and 2
NUM_CLASSES = 10
INIT_SCALE = 1.0  # kernels ~ U(-s/sqrt(fan_in), s/sqrt(fan_in))
CHECKPOINT_MAGIC = b"TNET"
CHECKPOINT_VERSION = 1

BATCH_SIZE = 64
EPOCHS = 60
LEARNING_RATE = 0.05
MILESTONES = (30, 45)  # epochs at which the learning rate is multiplied by LR_DECAY
LR_DECAY = 0.1
MOMENTUM = 0.9
WEIGHT_DECAY = 1e-4
DECAY_BIASES = True
SEED = 0
NUM_HEADS = 2
FLIP_PROB = 0.5
PAD_CROP = 4
FLIP_AVERAGE_EVAL = True
EVAL_BATCH_SIZE = 256
UNBIASED_BATCH_SIZE = 16
UNBIASED_NUM_BATCHES = 10_000
REDUCTION_TOLERANCE = 1e-9

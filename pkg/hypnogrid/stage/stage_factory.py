# -*- coding: utf-8 -*-
import os
import json
import configparser

from ..errors import ConfigError
from .params import ModelConfig
from .augment import AugmentationConfig
from .training import TrainConfig
from .synth import SynthSpec

CFG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'cfg')
TEMPLATE = os.path.join(CFG_DIR, 'train_template.cfg')
ABLATIONS = ('multiscale', 'compression', 'sequence', 'augmentation')


def ablation_cfg(name):
    if name not in ABLATIONS:
        raise ConfigError('unknown ablation row %r (known: %s)' % (name, ', '.join(ABLATIONS)))
    return os.path.join(CFG_DIR, 'ablation_%s.cfg' % name)


def load_config(*overlays):
    """The shipped template with each overlay file read on top, in order."""
    args = configparser.ConfigParser()
    args.read(TEMPLATE)
    for path in overlays:
        if path is None:
            continue
        if not os.path.exists(path):
            raise ConfigError('config file %s does not exist' % path)
        try:
            args.read(path)
        except configparser.Error as e:
            raise ConfigError('cannot parse %s: %s' % (path, e))
    return args


def _list(args, section, key):
    try:
        value = json.loads(args.get(section, key))
    except ValueError:
        raise ConfigError('[%s] %s must be a JSON list, got %r' % (section, key, args.get(section, key)))
    if not isinstance(value, list):
        raise ConfigError('[%s] %s must be a JSON list' % (section, key))
    return value


def _read(getter, section, key):
    try:
        return getter(section, key)
    except (ValueError, configparser.Error) as e:
        raise ConfigError('[%s] %s: %s' % (section, key, e))


def build_model_config(args):
    BRANCH_KERNELS = _list(args, 'Network', 'BRANCH_KERNELS')
    BRANCH_WIDTH = _read(args.getint, 'Network', 'BRANCH_WIDTH')
    SE_REDUCTION = _read(args.getint, 'Network', 'SE_REDUCTION')
    REDUCTION_KERNEL = _read(args.getint, 'Network', 'REDUCTION_KERNEL')
    REDUCTION_STRIDE = _read(args.getint, 'Network', 'REDUCTION_STRIDE')
    BLOCK_KERNEL = _read(args.getint, 'Network', 'BLOCK_KERNEL')
    BLOCK_DILATIONS = _list(args, 'Network', 'BLOCK_DILATIONS')
    BLOCK_STRIDES = _list(args, 'Network', 'BLOCK_STRIDES')
    BLOCK_CHANNELS = _list(args, 'Network', 'BLOCK_CHANNELS')
    H1 = _read(args.getint, 'Network', 'H1')
    H2 = _read(args.getint, 'Network', 'H2')
    D_ATT = _read(args.getint, 'Network', 'D_ATT')
    MLP_HIDDEN = _list(args, 'Network', 'MLP_HIDDEN')
    if len(MLP_HIDDEN) != 2:
        raise ConfigError('MLP_HIDDEN needs two widths, got %s' % MLP_HIDDEN)
    config = ModelConfig(
        branch_kernels=BRANCH_KERNELS,
        branch_width=BRANCH_WIDTH,
        se_reduction=SE_REDUCTION,
        reduction_kernel=REDUCTION_KERNEL,
        reduction_stride=REDUCTION_STRIDE,
        block_kernel=BLOCK_KERNEL,
        block_dilations=BLOCK_DILATIONS,
        block_strides=BLOCK_STRIDES,
        block_channels=BLOCK_CHANNELS,
        h1=H1,
        h2=H2,
        d_att=D_ATT,
        mlp_hidden=MLP_HIDDEN,
        n_classes=_read(args.getint, 'Dataset', 'N_CLASSES'),
        pool_dropout=_read(args.getfloat, 'Network', 'POOL_DROPOUT'),
        mlp_dropout=_read(args.getfloat, 'Network', 'MLP_DROPOUT'),
        chunk_len=_read(args.getint, 'Network', 'CHUNK_LEN'),
        context=_read(args.getint, 'Network', 'CONTEXT'),
        use_compression=_read(args.getboolean, 'Network', 'USE_COMPRESSION'),
        use_sequence=_read(args.getboolean, 'Network', 'USE_SEQUENCE')
    )
    return config.validate()


def build_train_config(args, seed=0, deterministic=True):
    return TrainConfig(
        lr=_read(args.getfloat, 'Training', 'LEARNING_RATE'),
        weight_decay=_read(args.getfloat, 'Training', 'WEIGHT_DECAY'),
        batch_size=_read(args.getint, 'Training', 'BATCH_SIZE'),
        max_epochs=_read(args.getint, 'Training', 'MAX_EPOCHS'),
        early_stop_patience=_read(args.getint, 'Training', 'EARLY_STOP_PATIENCE'),
        scheduler_factor=_read(args.getfloat, 'Training', 'SCHEDULER_FACTOR'),
        scheduler_patience=_read(args.getint, 'Training', 'SCHEDULER_PATIENCE'),
        min_lr=_read(args.getfloat, 'Training', 'MIN_LR'),
        class_weighting=_read(args.getboolean, 'Training', 'CLASS_WEIGHTING'),
        beta1=_read(args.getfloat, 'Training', 'BETA1'),
        beta2=_read(args.getfloat, 'Training', 'BETA2'),
        eps=_read(args.getfloat, 'Training', 'EPS'),
        shards=_read(args.getint, 'Training', 'SHARDS'),
        deterministic=deterministic,
        seed=seed
    )


def build_augmentation_config(args):
    ENABLED = _read(args.getboolean, 'Augmentation', 'ENABLED')
    if not ENABLED:
        return AugmentationConfig.disabled()
    return AugmentationConfig(
        enabled=True,
        noise_sigma_rel=_read(args.getfloat, 'Augmentation', 'NOISE_SIGMA_REL'),
        noise_prob=_read(args.getfloat, 'Augmentation', 'NOISE_PROB'),
        scale_range=_list(args, 'Augmentation', 'SCALE_RANGE'),
        scale_prob=_read(args.getfloat, 'Augmentation', 'SCALE_PROB'),
        shift_max=_read(args.getint, 'Augmentation', 'SHIFT_MAX'),
        shift_prob=_read(args.getfloat, 'Augmentation', 'SHIFT_PROB'),
        mask_len_range=_list(args, 'Augmentation', 'MASK_LEN_RANGE'),
        mask_prob=_read(args.getfloat, 'Augmentation', 'MASK_PROB'),
        minority_boost=_read(args.getint, 'Augmentation', 'MINORITY_BOOST'),
        minority_class=_read(args.getint, 'Augmentation', 'MINORITY_CLASS'),
        chunk_len=_read(args.getint, 'Network', 'CHUNK_LEN')
    )


def build_synth_spec(args, seed=0):
    MIXTURE = args.get('Synth', 'MIXTURE').strip()
    if MIXTURE.startswith('['):
        MIXTURE = _list(args, 'Synth', 'MIXTURE')
    return SynthSpec(
        n_subjects=_read(args.getint, 'Synth', 'N_SUBJECTS'),
        epochs_per_subject=_read(args.getint, 'Synth', 'EPOCHS_PER_SUBJECT'),
        mixture=MIXTURE,
        self_transition=_read(args.getfloat, 'Synth', 'SELF_TRANSITION'),
        noise_uv=_read(args.getfloat, 'Synth', 'NOISE_UV'),
        amplitude_scale=_read(args.getfloat, 'Synth', 'AMPLITUDE_SCALE'),
        seed=seed
    )

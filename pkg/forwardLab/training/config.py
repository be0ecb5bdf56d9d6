"""
Experiment configuration: architecture and training plan.

Configurations are YAML documents (``schema_version: 1``) with ``arch``, ``train`` and optional ``data`` mappings.
They are validated by the serializers in `API.serializers` and turned into frozen dataclasses; every error is
reported as a `ConfigError` anchored to the line of the offending key.
"""

import hashlib
import json
import logging
from collections import namedtuple
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from engine.blocks import BlockSpec
from engine.exceptions import ConfigError
from engine.goodness import GoodnessConfig


logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PRESET_DIR = Path(__file__).resolve().parent / 'presets'
EXECUTIONS = ('greedy', 'interleaved')
OPTIMIZERS = ('sgd', 'adam', 'adamw')

LayerGoodness = namedtuple('LayerGoodness', ['layer', 'channels', 'spatial', 'scales', 'dim'])


@dataclass(frozen=True)
class ArchSpec:
    """
    The whole network.

    Attributes:
        name (str): Preset or experiment name.
        input_channels (int): Image channels.
        input_size (int): Square input side before the stem.
        num_classes (int): K.
        blocks (tuple[BlockSpec]): Blocks in order.
        group_boundaries (tuple[int]): Index of the first block after each detach + FAL boundary.
        stem (bool): 2x2 average-pool downsample before block 0.
        fal (bool): Insert feature alignment layers at group boundaries.
    """

    name: str
    input_channels: int
    input_size: int
    num_classes: int
    blocks: tuple
    group_boundaries: tuple = ()
    stem: bool = False
    fal: bool = True

    @property
    def num_layers(self):
        return len(self.blocks)

    def spatial_sizes(self):
        """Spatial side of each block's input (and of its goodness input ``f``)."""

        size = self.input_size // 2 if self.stem else self.input_size
        sizes = []
        for block in self.blocks:
            sizes.append(size)
            size = block.output_size(size)
        return sizes

    def validate(self):
        """Check channel chaining, spatial propagation, goodness scales and group boundaries."""

        if not self.blocks:
            raise ConfigError("at least one block is required", path='arch.blocks')
        if self.stem and self.input_size % 2:
            raise ConfigError(f"stem needs an even input size, got {self.input_size}", path='arch.stem')

        channels = self.input_channels
        size = self.input_size // 2 if self.stem else self.input_size
        for index, block in enumerate(self.blocks):
            path = f"arch.blocks.{index}"
            if block.in_channels != channels:
                raise ConfigError(f"expects {block.in_channels} input channels, previous block gives {channels}",
                                  path=path)
            finest = block.goodness.finest_scale
            if finest > size:
                raise ConfigError(f"goodness scale {finest} does not fit a {size}x{size} activation",
                                  path=f"{path}.scales")
            try:
                block.goodness.dim(block.out_channels)
            except ConfigError as exc:
                raise ConfigError(exc.message, path=f"{path}.reduction_ratio") from None
            if block.has_pool and size % 2:
                raise ConfigError(f"cannot pool an odd {size}x{size} activation", path=f"{path}.pool")
            channels = block.out_channels
            size = block.output_size(size)
            if size < 1:
                raise ConfigError("spatial size collapsed to zero", path=path)

        previous = 0
        for position, boundary in enumerate(self.group_boundaries):
            if not previous < boundary < self.num_layers:
                raise ConfigError(f"boundaries must be strictly increasing within 1..{self.num_layers - 1}",
                                  path=f"arch.group_boundaries.{position}")
            previous = boundary
        return self


@dataclass(frozen=True)
class OptimizerSpec:
    name: str = 'sgd'
    lr_start: float = 0.05
    lr_end: float = 5e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


@dataclass(frozen=True)
class AugmentSpec:
    """Train-time augmentation policy; an all-default spec applies nothing."""

    crop_padding: int = 0
    hflip: bool = False
    jitter: float = 0.0
    grayscale_p: float = 0.0

    @property
    def enabled(self):
        return bool(self.crop_padding or self.hflip or self.jitter or self.grayscale_p)


@dataclass(frozen=True)
class FusionSpec:
    epochs: int = 500
    lr: float = 0.01
    selection_split: str = 'train'


@dataclass(frozen=True)
class DataSpec:
    """
    Where training data comes from.

    ``source`` is ``synthetic`` (generated from ``seed``), ``idx`` (``path`` is a directory holding
    ``train-images.idx``, ``train-labels.idx``, ``test-images.idx`` and ``test-labels.idx``) or ``manifest``
    (``path`` is a manifest JSON file).
    """

    source: str = 'synthetic'
    path: str = ''
    train_size: int = 5000
    test_size: int = 1000
    noise: float = 1.0
    seed: int = 0
    mean: tuple = ()
    std: tuple = ()
    workers: int = 2
    prefetch: int = 4


@dataclass(frozen=True)
class TrainPlan:
    """
    How the network is trained.

    Attributes:
        hgb_m (int): Block size m; 1 is strictly layer-wise, ``num_layers`` is end-to-end.
        execution (str): ``greedy`` (all groups forwarded, then updated) or ``interleaved``
            (forward, backward, step and release one group at a time).
        warmup_epochs (int): Linear warmup length, used only when ``hgb_m > 1``.
    """

    epochs: int
    batch_size: int
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    grad_clip: float = None
    hgb_m: int = 1
    execution: str = 'greedy'
    warmup_epochs: int = 5
    seed: int = 0
    precision: str = 'float64'
    deterministic: bool = True
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    fusion: FusionSpec = field(default_factory=FusionSpec)
    data: DataSpec = field(default_factory=DataSpec)

    @property
    def effective_warmup(self):
        return self.warmup_epochs if self.hgb_m > 1 else 0

    def validate(self, arch):
        if not 1 <= self.hgb_m <= arch.num_layers:
            raise ConfigError(f"hgb_m must be in 1..{arch.num_layers}, got {self.hgb_m}", path='train.hgb_m')
        if self.execution not in EXECUTIONS:
            raise ConfigError(f"execution must be one of {EXECUTIONS}", path='train.execution')
        if self.optimizer.name not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}", path='train.optimizer.name')
        if self.hgb_m > 1 and arch.num_layers % self.hgb_m:
            logger.warning("hgb_m=%s does not divide %s layers; the last group is shorter",
                           self.hgb_m, arch.num_layers)
        return self


def goodness_dims(arch):
    """
    Goodness dimension of every layer.

    Returns:
        list[LayerGoodness]: ``(layer, channels, spatial, scales, dim)`` per block.
    """

    return [
        LayerGoodness(index, block.out_channels, size, block.goodness.active_scales,
                      block.goodness.dim(block.out_channels))
        for index, (block, size) in enumerate(zip(arch.blocks, arch.spatial_sizes()))
    ]


# YAML handling

def _line_map(text):
    """Map dotted key paths to 1-based source lines."""

    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
                lines[path] = key_node.start_mark.line + 1
                walk(value_node, path)
        elif isinstance(node, yaml.SequenceNode):
            for index, item in enumerate(node.value):
                path = f"{prefix}.{index}"
                lines[path] = item.start_mark.line + 1
                walk(item, path)

    try:
        walk(yaml.compose(text), '')
    except yaml.YAMLError:
        pass
    return lines


def _line_for(lines, path):
    while path:
        if path in lines:
            return lines[path]
        path = path.rpartition('.')[0]
    return None


def _first_error(errors, prefix=''):
    """First (dotted path, message) pair of a nested DRF error structure."""

    if isinstance(errors, dict):
        for key, value in errors.items():
            path = prefix if key == 'non_field_errors' else (f"{prefix}.{key}" if prefix else str(key))
            found = _first_error(value, path)
            if found:
                return found
    elif isinstance(errors, list):
        for index, item in enumerate(errors):
            if isinstance(item, (dict, list)):
                found = _first_error(item, f"{prefix}.{index}" if prefix else str(index))
                if found:
                    return found
            elif item:
                return prefix, str(item)
    return None


def apply_overrides(data, overrides):
    """
    Apply ``key=value`` overrides with dotted keys; values are parsed as YAML scalars.

    Raises:
        ConfigError: For malformed overrides or paths through missing list items.
    """

    for override in overrides:
        key, sep, raw = override.partition('=')
        if not sep or not key:
            raise ConfigError(f"override {override!r} is not of the form key=value")
        parts = key.strip().split('.')
        node = data
        for depth, part in enumerate(parts):
            last = depth == len(parts) - 1
            if isinstance(node, list):
                if not part.isdigit() or int(part) >= len(node):
                    raise ConfigError(f"no list item {part!r}", path='.'.join(parts[:depth + 1]))
                part = int(part)
            elif not isinstance(node, dict):
                raise ConfigError("cannot descend into a scalar", path='.'.join(parts[:depth]))
            if last:
                node[part] = yaml.safe_load(raw) if raw.strip() else None
            else:
                if isinstance(node, dict) and part not in node:
                    node[part] = {}
                node = node[part]
    return data


def _expand_blocks(arch):
    defaults = arch.pop('defaults', None) or {}
    blocks = []
    for block in arch.get('blocks') or []:
        merged = dict(defaults)
        merged.update(block or {})
        blocks.append(merged)
    if blocks:
        arch['blocks'] = blocks
    return arch


def _build(validated, source_name):
    arch_data = validated['arch']
    channels = arch_data['input_channels']
    blocks = []
    for block in arch_data['blocks']:
        goodness = GoodnessConfig(
            scales=tuple(block['scales']),
            reduction_ratio=block['reduction_ratio'],
            include_cc=block['include_cc'],
            include_multiscale=block['include_multiscale'],
        )
        blocks.append(BlockSpec(
            in_channels=channels,
            out_channels=block['out_channels'],
            has_pool=block['pool'],
            dropout_p=block['dropout_p'],
            norm=block['norm'],
            goodness=goodness,
        ))
        channels = block['out_channels']

    arch = ArchSpec(
        name=validated.get('name') or source_name,
        input_channels=arch_data['input_channels'],
        input_size=arch_data['input_size'],
        num_classes=arch_data['num_classes'],
        blocks=tuple(blocks),
        group_boundaries=tuple(arch_data['group_boundaries']),
        stem=arch_data['stem'],
        fal=arch_data['fal'],
    )

    train = dict(validated['train'])
    optimizer = dict(train.pop('optimizer'))
    optimizer['betas'] = tuple(optimizer['betas'])
    data = dict(validated.get('data') or {})
    for key in ('mean', 'std'):
        if key in data:
            data[key] = tuple(data[key])
    plan = TrainPlan(
        optimizer=OptimizerSpec(**optimizer),
        augment=AugmentSpec(**train.pop('augment', {})),
        fusion=FusionSpec(**train.pop('fusion', {})),
        data=DataSpec(**data),
        **train,
    )
    return arch, plan


def parse_config(text, source=None, overrides=()):
    """
    Parse and validate a YAML configuration.

    Args:
        text (str): YAML document.
        source (str | None): File name used in error messages.
        overrides (Iterable[str]): ``key=value`` overrides applied before validation.

    Returns:
        tuple: ``(ArchSpec, TrainPlan)``.

    Raises:
        ConfigError: On parse errors and on any invariant violation, with the offending line when known.
    """

    from API.serializers import ExperimentConfigSerializer

    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, 'problem_mark', None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', None) or exc}",
                          line=mark.line + 1 if mark else None, source=source) from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping", source=source)

    lines = _line_map(text)
    try:
        apply_overrides(data, overrides)
    except ConfigError as exc:
        raise ConfigError(exc.message, path=exc.path, source=source) from None
    if isinstance(data.get('arch'), dict):
        _expand_blocks(data['arch'])

    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        path, message = _first_error(serializer.errors) or ('', 'invalid configuration')
        raise ConfigError(message, path=path or None, line=_line_for(lines, path), source=source)

    name = Path(source).stem if source else 'custom'
    try:
        arch, plan = _build(serializer.validated_data, name)
        arch.validate()
        plan.validate(arch)
    except ConfigError as exc:
        raise ConfigError(exc.message, path=exc.path, line=_line_for(lines, exc.path or ''),
                          source=source) from None
    return arch, plan


def load_config(path, overrides=()):
    """Read and validate a configuration file."""

    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", source=str(path)) from None
    arch, plan = parse_config(text, source=str(path), overrides=overrides)
    logger.info("Loaded configuration %s: %s blocks, m=%s, %s execution",
                path, arch.num_layers, plan.hgb_m, plan.execution)
    return arch, plan


def list_presets():
    return sorted(p.stem for p in PRESET_DIR.glob('*.yaml'))


def preset_path(name):
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return path


def load_preset(name, overrides=()):
    return load_config(preset_path(name), overrides)


def config_to_dict(arch, plan):
    """Plain mapping of a configuration, with every block written out in full."""

    blocks = []
    for block in arch.blocks:
        goodness = block.goodness
        blocks.append({
            'out_channels': block.out_channels,
            'pool': block.has_pool,
            'dropout_p': block.dropout_p,
            'norm': block.norm,
            'scales': list(goodness.scales),
            'reduction_ratio': goodness.reduction_ratio,
            'include_cc': goodness.include_cc,
            'include_multiscale': goodness.include_multiscale,
        })
    train = asdict(plan)
    train['optimizer']['betas'] = list(plan.optimizer.betas)
    data = train.pop('data')
    data['mean'], data['std'] = list(plan.data.mean), list(plan.data.std)
    return {
        'schema_version': SCHEMA_VERSION,
        'name': arch.name,
        'arch': {
            'input_channels': arch.input_channels,
            'input_size': arch.input_size,
            'num_classes': arch.num_classes,
            'stem': arch.stem,
            'fal': arch.fal,
            'group_boundaries': list(arch.group_boundaries),
            'blocks': blocks,
        },
        'train': train,
        'data': data,
    }


def dump_config(arch, plan):
    return yaml.safe_dump(config_to_dict(arch, plan), sort_keys=False)


def save_config(arch, plan, path):
    Path(path).write_text(dump_config(arch, plan), encoding='utf-8')


def arch_hash(arch):
    """SHA-256 hex digest of the parameter-shaping part of the architecture."""

    payload = config_to_dict(arch, TrainPlan(epochs=1, batch_size=1))['arch']
    for block in payload['blocks']:
        block.pop('dropout_p')
    encoded = json.dumps(payload, sort_keys=True).encode('utf-8')
    return hashlib.sha256(encoded).hexdigest()

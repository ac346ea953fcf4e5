'''
The experiment commands behind `fg`. Every command owns one output directory and finishes by
writing a `RunManifest` that records its full configuration and the digests of its
artifacts, so a run can be repeated exactly.
'''
from __future__ import unicode_literals
from collections import namedtuple, OrderedDict
import datetime
import glob
import json
import os

import numpy as np
import pytz
from six import iteritems

from . import __version__
from .bench.scoring import Dimension, PromptCase, ScoreReport, METRICS, vqa_case_score, dimension_score
from .bench.tables import table_rows, published_gains
from .bench.vqa import answer_case, video_metadata
from .core.errors import ConfigError, StorageError
from .core.rng import Rng
from .core.storage import RunDirectory, deserialize_tensor
from .core.tensor import LatentVideo, TokenSequence, Modality, minmax_normalize
from .diagnostics.profile import (LayerProfile, LayerProfiler, WeakRule, identify_weak_layers, mark_weak,
                                  sampled_steps, heatmap_rows, profile_rows, HEATMAP_HEADER, PROFILE_HEADER)
from .flow import FlowConfig, euler_sample, sample_training_path
from .guidance.config import GuidanceConfig
from .guidance.runtime import FocalGuidance, GuidedVelocity, keyword_maps
from .model.checkpoint import save_checkpoint, load_checkpoint
from .model.dit import DiT, DitConfig, Conditioning
from .model.training import TrainingExample, ParameterScope, parse_mask, train
from .records.fields import (StringField, UInt64Field, DateTimeField, MappingField, RecordField,
                             NullableField)
from .records.models import Record
from .records.utils import format_index_list
from .synth.scene import SceneSpec, render_scene, default_scene_set

import logging
logger = logging.getLogger('focalguide')


SceneData = namedtuple('SceneData', 'spec latent cond signatures')

SCENE_FILES = ('scene.json', 'latent.fgt', 'z_ref.fgt', 'text.fgt', 'image.fgt', 'signatures.fgt')
LOSS_HEADER = ('step', 'loss')
TRACKS_HEADER = ('block', 'frame', 'visible', 'cy', 'cx', 'area')
TABLE_HEADER = ('model', 'params', 'published_total', 'recomputed_total')
GAINS_HEADER = ('guided', 'baseline', 'gain_percent')


class RunManifest(Record):
    '''
    Everything needed to repeat a run: the command, its seed, the model, guidance and flow
    configurations it used, extra arguments, and the sha256 digest of every artifact.
    '''

    command = StringField()
    version = StringField(default=__version__)
    created = DateTimeField()
    seed = UInt64Field(default=0)
    dit = NullableField(RecordField(DitConfig))
    guidance = NullableField(RecordField(GuidanceConfig))
    flow = NullableField(RecordField(FlowConfig))
    scene = NullableField(RecordField(SceneSpec))
    args = MappingField(StringField())
    artifacts = MappingField(StringField())


class _NoProgress(object):

    def update(self, n=1):
        pass

    def close(self):
        pass


def _progress(factory, total, desc):
    if factory is None:
        return _NoProgress()
    return factory(total=total, desc=desc)


def _finish(run, command, seed, args=None, **configs):
    manifest = RunManifest(command=command, seed=seed, created=datetime.datetime.now(pytz.utc),
                           args=dict((k, '%s' % v) for k, v in iteritems(args or {}) if v is not None),
                           **configs)
    run.write_manifest(manifest)
    return manifest


# Scenes

def write_scene(run, scene, prefix=''):
    '''
    Writes a rendered scene (tensors, spec and block tracks) into `run` under `prefix`.
    '''
    spec = scene.spec
    run.write_json(prefix + 'scene.json', spec.to_json())
    run.write_tensor(prefix + 'latent.fgt', scene.latent.data)
    run.write_tensor(prefix + 'z_ref.fgt', scene.z_ref.data)
    run.write_tensor(prefix + 'text.fgt', scene.text.tokens)
    run.write_tensor(prefix + 'image.fgt', scene.image.tokens)
    run.write_tensor(prefix + 'signatures.fgt', scene.signatures)
    if spec.blocks:
        run.write_tensor(prefix + 'regions.fgt', np.array(scene.regions, dtype=np.float64))
    rows = []
    for block, track in zip(spec.blocks, scene.tracks):
        for p in track:
            rows.append((block.name, p.frame, int(p.visible), p.cy if p.visible else '', p.cx if p.visible else '', p.area))
    run.write_csv(prefix + 'tracks.csv', TRACKS_HEADER, rows)


def scene_data(scene):
    return SceneData(scene.spec, scene.latent, Conditioning(scene.text, scene.image, scene.z_ref), scene.signatures)


def load_scene(path):
    '''
    Reads a scene directory written by `write_scene`.
    '''
    missing = [name for name in SCENE_FILES if not os.path.exists(os.path.join(path, name))]
    if missing:
        raise StorageError('Scene directory %s lacks %s' % (path, ', '.join(missing)))
    spec = SceneSpec.load(os.path.join(path, 'scene.json'))
    read = lambda name: deserialize_tensor(os.path.join(path, name))
    cond = Conditioning(TokenSequence(Modality.text, read('text.fgt')),
                        TokenSequence(Modality.image, read('image.fgt'), grid=(spec.height, spec.width)),
                        LatentVideo(read('z_ref.fgt')))
    return SceneData(spec, LatentVideo(read('latent.fgt')), cond, read('signatures.fgt'))


def load_scenes(path):
    '''
    A single scene directory, or every scene directory directly below `path`.
    '''
    if os.path.exists(os.path.join(path, 'scene.json')):
        return [load_scene(path)]
    dirs = sorted(d for d in glob.glob(os.path.join(path, '*')) if os.path.exists(os.path.join(d, 'scene.json')))
    if not dirs:
        raise StorageError('No scenes found in %s' % path)
    return [load_scene(d) for d in dirs]


def _scene(scene_path, spec, seed):
    if scene_path:
        return load_scene(scene_path)
    return scene_data(render_scene(spec or SceneSpec.default(), seed))


def _block_positions(spec):
    # block tokens come first in the text sequence
    return list(range(len(spec.blocks)))


# Models and weak layers

def _model(checkpoint, dit):
    if checkpoint:
        return load_checkpoint(checkpoint)[0]
    return DiT(dit)


def load_profiles(path):
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except (IOError, OSError) as e:
        raise StorageError('Cannot read %s: %s' % (path, e))
    except ValueError as e:
        raise ConfigError('Invalid profile file %s: %s' % (path, e))
    return [LayerProfile.from_dict(d) for d in data]


def resolve_weak_layers(model, rule=None, profile=None):
    '''
    The weak layers a rule selects for `model`. A fractional rule needs the layer profiles
    of a previous `profile` run; without a rule the model's configured weak layers apply.
    '''
    if rule is None:
        return model.config.weak_layer_set()
    if rule.indices is not None:
        return identify_weak_layers([None], rule, model.num_layers)
    if not profile:
        raise ConfigError('Weak rule %s needs layer profiles (run "fg profile" and pass --profile)' % rule)
    profiles = load_profiles(profile)
    if len(profiles) != model.num_layers:
        raise ConfigError('Profile has %d layers, model has %d' % (len(profiles), model.num_layers))
    return identify_weak_layers(profiles, rule, model.num_layers)


def _profile_sampling(model, guidance, scene, flow, seed, sampled, samples, normalize_by_w, progress,
                      dump=None):
    '''
    Samples `samples` latents with hooks on and profiles the layer states at `sampled`
    evenly spaced steps. Returns (profiler, last latent).
    '''
    steps = set(sampled_steps(flow.steps, sampled))
    grid = scene.latent.shape[:3]
    profiler = LayerProfiler(_block_positions(scene.spec), grid, normalize_by_w)
    bar = _progress(progress, samples * flow.steps, 'sample')
    latent = None
    try:
        for s in range(samples):
            velocity = GuidedVelocity(model, guidance, hooks=True)

            def callback(i, t, z, v):
                bar.update()
                if i not in steps:
                    return
                profiler.add(i, velocity.last_states)
                if dump is not None and s == 0:
                    for state in velocity.last_states:
                        maps = keyword_maps(state, profiler.keyword_positions, grid)
                        for k, keyword in enumerate(profiler.keyword_positions):
                            dump.write_map_csv('maps/step%03d_layer%02d_keyword%d.csv' % (i, state.layer, keyword),
                                               minmax_normalize(maps[k]))

            z1 = Rng(seed).spawn('noise-%d' % s).normal(scene.latent.shape)
            latent = euler_sample(velocity, z1, flow.steps, scene.cond, callback)
    finally:
        bar.close()
    return profiler, latent


def _write_profile(run, profiler, weak):
    profiles = mark_weak(profiler.profiles(), weak)
    run.write_csv('heatmap.csv', HEATMAP_HEADER, heatmap_rows(profiler.rows))
    run.write_csv('profile.csv', PROFILE_HEADER, profile_rows(profiles))
    run.write_json('profile.json', [p.to_dict() for p in profiles])
    return profiles


# Commands

def cmd_synth(out, seed=0, spec=None, count=4, overwrite=False):
    '''
    Renders synthetic scenes into `out/scene_NNN/`: the given spec once, or `count` random
    training scenes derived from `seed`. Returns the rendered scenes.
    '''
    run = RunDirectory(out, 'synth', overwrite=overwrite)
    specs = [spec] if spec is not None else default_scene_set(seed, count)
    scenes = []
    for i, s in enumerate(specs):
        scene = render_scene(s, Rng(seed).spawn('scene-%d' % i).seed)
        write_scene(run, scene, 'scene_%03d/' % i)
        scenes.append(scene)
    logger.info('Rendered %d scene(s) into %s', len(scenes), out)
    _finish(run, 'synth', seed, args=dict(count=len(specs)), scene=spec)
    return scenes


def cmd_profile(out, seed=0, dit=None, checkpoint=None, scene_path=None, spec=None, guidance=None, flow=None,
                sampled=4, samples=1, weak_rule=None, normalize_by_w=False, dump_maps=False, overwrite=False,
                progress=None):
    '''
    Profiles the semantic responsiveness of every layer: samples with hooks on, computes
    Moran's I and std of the normalized keyword maps at `sampled` evenly spaced steps,
    averages them over steps, keywords and `samples` samples, and marks the weak layers
    selected by `weak_rule` (default: the model's configured weak layers).

    Writes heatmap.csv, profile.csv and profile.json. Returns the layer profiles.
    '''
    run = RunDirectory(out, 'profile', overwrite=overwrite)
    model = _model(checkpoint, dit or DitConfig(seed=seed))
    guidance = guidance or GuidanceConfig.off()
    flow = flow or FlowConfig(seed=seed)
    scene = _scene(scene_path, spec, seed)
    profiler, _ = _profile_sampling(model, FocalGuidance(guidance), scene, flow, seed, sampled, samples,
                                    normalize_by_w, progress, dump=run if dump_maps else None)
    rule = weak_rule or WeakRule(indices=model.config.weak_layer_set())
    weak = identify_weak_layers(profiler.profiles(), rule, model.num_layers)
    profiles = _write_profile(run, profiler, weak)
    logger.info('Weak layers (%s): %s', rule, format_index_list(weak))
    _finish(run, 'profile', seed, dit=model.config, guidance=guidance, flow=flow, scene=scene.spec,
            args=OrderedDict([('checkpoint', checkpoint), ('scene', scene_path), ('sampled', sampled),
                              ('samples', samples), ('weak_rule', rule), ('weak_layers', format_index_list(weak)),
                              ('normalize_by_w', normalize_by_w)]))
    return profiles


def cmd_train(out, data, seed=0, dit=None, checkpoint=None, steps=500, lr=0.05, mask=None,
              scope=ParameterScope.cross_attention, guidance=None, flow=None, paths_per_scene=1,
              weak_rule=None, profile=None, overwrite=False, progress=None):
    '''
    Fine-tunes the parameters selected by `mask` (default: the weak layers) on the rectified
    flow loss over the scenes in `data`. Writes the checkpoint to `out/checkpoint/` and the
    loss curve (the loss before the first step, then after each step) to loss.csv.

    Returns (model, losses).
    '''
    run = RunDirectory(out, 'train', overwrite=overwrite)
    model = _model(checkpoint, dit or DitConfig(seed=seed))
    flow = flow or FlowConfig(seed=seed)
    guidance = guidance or GuidanceConfig.off()
    if mask is None:
        mask = resolve_weak_layers(model, weak_rule, profile)
    mask = parse_mask(mask)
    scenes = load_scenes(data)
    batch = []
    for i, scene in enumerate(scenes):
        for j in range(paths_per_scene):
            path, t = sample_training_path(scene.latent, Rng(seed).spawn('train-path-%d-%d' % (i, j)), flow.t_sampling)
            batch.append(TrainingExample(path, t, scene.cond))
    runtime = None if guidance.is_noop() else FocalGuidance(guidance)
    bar = _progress(progress, steps, 'train')
    try:
        losses = train(model, batch, steps, lr, mask, scope, runtime, callback=lambda i, loss: bar.update())
    finally:
        bar.close()
    run.write_csv('loss.csv', LOSS_HEADER, list(enumerate(losses)))
    save_checkpoint(model, run.path_for('checkpoint'), step=steps)
    for name in model.params.names():
        run.register('checkpoint/params/%s.fgt' % name)
    run.register('checkpoint/checkpoint.json')
    _finish(run, 'train', seed, dit=model.config, guidance=guidance, flow=flow,
            args=OrderedDict([('data', data), ('checkpoint', checkpoint), ('steps', steps), ('lr', repr(lr)),
                              ('mask', ','.join('%s' % m for m in mask)), ('scope', scope.name),
                              ('paths_per_scene', paths_per_scene)]))
    return model, losses


def cmd_sample(out, seed=0, dit=None, checkpoint=None, scene_path=None, spec=None, guidance=None, flow=None,
               diagnostics=False, sampled=4, weak_rule=None, profile=None, manifest=None, overwrite=False,
               progress=None):
    '''
    Samples one latent video for a scene with or without guidance and writes it as latent.fgt
    next to the scene's spec and signatures, so the output directory can be scored as a video.
    With `diagnostics`, the layer states of `sampled` steps are profiled as in `cmd_profile`.

    `manifest` replays the run described by a previous sample manifest. Returns
    (latent, guidance runtime).
    '''
    if manifest is not None:
        m = RunManifest.load(manifest)
        if m.command != 'sample':
            raise ConfigError('%s is the manifest of "%s", not of a sample run' % (manifest, m.command))
        return cmd_sample(out, seed=m.seed, dit=m.dit, checkpoint=m.args.get('checkpoint'),
                          scene_path=m.args.get('scene'), spec=m.scene, guidance=m.guidance, flow=m.flow,
                          diagnostics=m.args.get('diagnostics') == 'True', sampled=int(m.args.get('sampled', 4)),
                          overwrite=overwrite, progress=progress)
    run = RunDirectory(out, 'sample', overwrite=overwrite)
    model = _model(checkpoint, dit or DitConfig(seed=seed))
    guidance = guidance or GuidanceConfig()
    if weak_rule is not None:
        guidance = guidance.replace(weak_layers=format_index_list(resolve_weak_layers(model, weak_rule, profile)))
    flow = flow or FlowConfig(seed=seed)
    scene = _scene(scene_path, spec, seed)
    runtime = FocalGuidance(guidance if flow.guidance else GuidanceConfig.off())
    if diagnostics:
        profiler, latent = _profile_sampling(model, runtime, scene, flow, seed, sampled, 1, False, progress)
        _write_profile(run, profiler, runtime.weak_layers(model))
    else:
        bar = _progress(progress, flow.steps, 'sample')
        try:
            z1 = Rng(seed).spawn('noise-0').normal(scene.latent.shape)
            latent = euler_sample(GuidedVelocity(model, runtime), z1, flow.steps, scene.cond,
                                  lambda i, t, z, v: bar.update())
        finally:
            bar.close()
    run.write_tensor('latent.fgt', latent.data)
    run.write_json('scene.json', scene.spec.to_json())
    run.write_tensor('signatures.fgt', scene.signatures)
    logger.info('Guidance counters: %s', dict(runtime.counters))
    args = OrderedDict([('checkpoint', checkpoint), ('scene', scene_path), ('diagnostics', diagnostics),
                        ('sampled', sampled)])
    for key in sorted(runtime.counters):
        args['counter.' + key] = runtime.counters[key]
    _finish(run, 'sample', seed, dit=model.config, guidance=guidance, flow=flow, scene=scene.spec, args=args)
    return latent, runtime


def load_video(path):
    '''
    Video metadata of a directory holding latent.fgt, scene.json and signatures.fgt.
    '''
    if not os.path.isdir(path):
        raise StorageError('missing video %s' % path)
    spec = SceneSpec.load(os.path.join(path, 'scene.json'))
    latent = deserialize_tensor(os.path.join(path, 'latent.fgt'))
    signatures = deserialize_tensor(os.path.join(path, 'signatures.fgt'))
    names = [b.name for b in spec.blocks]
    return video_metadata(latent, names, [signatures[s] for s in spec.signature_slots()])


def load_cases(path):
    files = sorted(glob.glob(os.path.join(path, '*.json')))
    if not files:
        raise ConfigError('No prompt cases found in %s' % path)
    return [PromptCase.load(f) for f in files]


def load_external_metrics(path):
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except (IOError, OSError) as e:
        raise StorageError('Cannot read %s: %s' % (path, e))
    except ValueError as e:
        raise ConfigError('Invalid metrics file %s: %s' % (path, e))
    unknown = set(data) - set(METRICS)
    if unknown:
        raise ConfigError('Unknown metric(s) %s' % ', '.join(sorted(unknown)))
    return dict((k, float(v)) for k, v in iteritems(data))


def cmd_score(out, cases, videos, external_metrics=None, overwrite=False):
    '''
    Answers every case's questions with the mock VQA judge on the case's video, scores the
    cases all-or-nothing and averages them per dimension into scores.json.

    The two reference-consistency metrics are never computed here; they come from
    `external_metrics` (a JSON object of metric values, which also overrides computed
    dimensions). When all five metrics are known, report.json holds the `ScoreReport`.

    Returns (dimension scores, report or None).
    '''
    run = RunDirectory(out, 'score', overwrite=overwrite)
    case_scores = OrderedDict((d.name, []) for d in Dimension)
    metadata = {}
    for case in load_cases(cases):
        if case.video not in metadata:
            metadata[case.video] = load_video(os.path.join(videos, case.video))
        score = vqa_case_score(answer_case(case, metadata[case.video]))
        logger.debug('case %s: %d', case.name, score)
        case_scores[case.dimension.name].append(score)
    scores = OrderedDict((d, dimension_score(s)) for d, s in iteritems(case_scores) if s)
    run.write_json('scores.json', scores)
    metrics = dict(scores)
    if external_metrics:
        external = load_external_metrics(external_metrics)
        for name in set(external) & set(scores):
            logger.warning('External %s=%r overrides the computed %r', name, external[name], scores[name])
        metrics.update(external)
    report = None
    if all(m in metrics for m in METRICS):
        report = ScoreReport.build(**metrics)
        run.write_json('report.json', report.to_json())
    elif external_metrics:
        raise ConfigError('missing metric(s): %s' % ', '.join(m for m in METRICS if m not in metrics))
    else:
        logger.warning('No total score: the reference-consistency metrics need --external-metrics')
    _finish(run, 'score', 0, args=OrderedDict([('cases', cases), ('videos', videos),
                                               ('external_metrics', external_metrics)]))
    return scores, report


def cmd_table(out=None, overwrite=False):
    '''
    The published main results with their recomputed totals, and the published gains of the
    guided models. Writes table.csv and gains.csv when `out` is given.
    '''
    rows, gains = table_rows(), published_gains()
    if out is not None:
        run = RunDirectory(out, 'table', overwrite=overwrite)
        run.write_csv('table.csv', TABLE_HEADER, rows)
        run.write_csv('gains.csv', GAINS_HEADER, gains)
        _finish(run, 'table', 0)
    return rows, gains

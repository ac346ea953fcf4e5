'''
The `fg` command line.

    fg synth   --out data/ [--spec scene.json] [--count 4]
    fg profile --out prof/ [--checkpoint ckpt/] [--scene data/scene_000] [--samples N]
    fg train   --out run/ --data data/ [--steps 500] [--mask 2-5]
    fg sample  --out smp/ [--checkpoint run/checkpoint] [--fg on|off|--fsg-only|--ac-only]
    fg sample  --out smp2/ --manifest smp/manifest.json
    fg score   --out rep/ --cases cases/ --videos videos/ [--external-metrics m.json]
    fg table   [--out tab/]

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 I/O error.
'''
from __future__ import unicode_literals, print_function
import argparse
import logging
import os
import sys


def limit_threads(environ=os.environ):
    '''
    Applies FG_THREADS to the BLAS thread pools. Must run before numpy is imported.
    '''
    threads = environ.get('FG_THREADS')
    if threads:
        for name in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
            environ.setdefault(name, threads)


limit_threads()

from tqdm import tqdm  # noqa: E402

from . import __version__  # noqa: E402
from .commands import cmd_synth, cmd_profile, cmd_train, cmd_sample, cmd_score, cmd_table  # noqa: E402
from .core.errors import FocalGuideException  # noqa: E402
from .diagnostics.profile import WeakRule  # noqa: E402
from .flow import FlowConfig, TimeSampling  # noqa: E402
from .guidance.config import GuidanceConfig  # noqa: E402
from .model.dit import DitConfig  # noqa: E402
from .model.topologies import ConditioningMode  # noqa: E402
from .model.training import ParameterScope  # noqa: E402
from .synth.scene import SceneSpec  # noqa: E402

logger = logging.getLogger('focalguide')


def _common(parser):
    parser.add_argument('--out', required=True, help='output directory')
    parser.add_argument('--seed', type=int, default=0, help='seed of all randomness in the run')
    parser.add_argument('--overwrite', action='store_true', help='reuse a directory owned by another command')


def _model_options(parser):
    parser.add_argument('--preset', default='toy', choices=sorted(DitConfig.PRESETS))
    parser.add_argument('--layers', type=int)
    parser.add_argument('--weak-layers', help='semantic-weak layers of the model, e.g. "1-2"')
    parser.add_argument('--mode', choices=[m.name for m in ConditioningMode], help='conditioning topology')
    parser.add_argument('--checkpoint', help='checkpoint directory to start from')


def _flow_options(parser, steps=50):
    parser.add_argument('--steps', type=int, default=steps, help='Euler sampling steps')


def _guidance_options(parser, default='on'):
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--fg', choices=('on', 'off'), default=default, help='focal guidance')
    group.add_argument('--fsg-only', action='store_true', help='keyword guidance without the attention cache')
    group.add_argument('--ac-only', action='store_true', help='attention cache without keyword guidance')
    parser.add_argument('--guidance', help='GuidanceConfig JSON file')
    parser.add_argument('--weak-rule', type=WeakRule.parse, help='bottom:<q>, list:<indices> or preset:<name>')
    parser.add_argument('--profile', help='profile.json of a previous profile run (for bottom:<q>)')


def build_parser():
    parser = argparse.ArgumentParser(prog='fg', description='Focal guidance experiments on a toy video DiT.')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')
    sub = parser.add_subparsers(dest='command')

    p = sub.add_parser('synth', help='render synthetic scenes')
    _common(p)
    p.add_argument('--spec', help='SceneSpec JSON file (default: random training scenes)')
    p.add_argument('--count', type=int, default=4)

    p = sub.add_parser('profile', help='profile the semantic responsiveness of every layer')
    _common(p)
    _model_options(p)
    _flow_options(p)
    _guidance_options(p, default='off')
    p.add_argument('--scene', help='scene directory (default: the default scene)')
    p.add_argument('--sampled', type=int, default=4, help='evenly spaced steps to profile')
    p.add_argument('--samples', type=int, default=1, help='samples to average over')
    p.add_argument('--normalize-by-w', action='store_true', help='divide Moran\'s I by the weight sum')
    p.add_argument('--dump-maps', action='store_true', help='write every normalized keyword map as CSV')

    p = sub.add_parser('train', help='fine-tune the weak layers')
    _common(p)
    _model_options(p)
    _guidance_options(p, default='off')
    p.add_argument('--data', required=True, help='output directory of "fg synth"')
    p.add_argument('--steps', type=int, default=500)
    p.add_argument('--lr', type=float, default=0.05)
    p.add_argument('--mask', help='trainable layers and groups, e.g. "2-5,head" (default: weak layers)')
    p.add_argument('--scope', choices=[s.name for s in ParameterScope], default=ParameterScope.cross_attention.name)
    p.add_argument('--paths', type=int, default=1, help='training paths per scene')
    p.add_argument('--t-sampling', choices=[s.name for s in TimeSampling], default=TimeSampling.uniform.name)

    p = sub.add_parser('sample', help='sample a latent video')
    _common(p)
    _model_options(p)
    _flow_options(p)
    _guidance_options(p)
    p.add_argument('--scene', help='scene directory (default: the default scene)')
    p.add_argument('--diagnostics', action='store_true', help='profile the layer states while sampling')
    p.add_argument('--sampled', type=int, default=4)
    p.add_argument('--manifest', help='replay the sample run of this manifest')

    p = sub.add_parser('score', help='score generated videos against prompt cases')
    _common(p)
    p.add_argument('--cases', required=True, help='directory of PromptCase JSON files')
    p.add_argument('--videos', required=True, help='directory of video directories')
    p.add_argument('--external-metrics', help='JSON object of externally computed metrics')

    p = sub.add_parser('table', help='published totals and gains')
    p.add_argument('--out')
    p.add_argument('--overwrite', action='store_true')
    return parser


def dit_config(args):
    if args.checkpoint:
        return None
    overrides = dict(seed=args.seed)
    if args.layers is not None:
        overrides['layers'] = args.layers
    if args.weak_layers is not None:
        overrides['weak_layers'] = args.weak_layers
    if args.mode is not None:
        overrides['conditioning_mode'] = args.mode
    return DitConfig.preset(args.preset, **overrides)


def guidance_config(args):
    config = GuidanceConfig.load(args.guidance) if args.guidance else GuidanceConfig()
    if args.fsg_only:
        return config.ablation(fsg=True, cache=False)
    if args.ac_only:
        return config.ablation(fsg=False, cache=True)
    if args.fg == 'off':
        return config.replace(enabled=False)
    return config


def _progress(args):
    if args.quiet:
        return None
    return lambda total, desc: tqdm(total=total, desc=desc, leave=False)


def run(args):
    progress = _progress(args)
    if args.command == 'synth':
        spec = SceneSpec.load(args.spec) if args.spec else None
        cmd_synth(args.out, args.seed, spec, args.count, args.overwrite)
    elif args.command == 'profile':
        cmd_profile(args.out, args.seed, dit_config(args), args.checkpoint, args.scene,
                    guidance=guidance_config(args), flow=FlowConfig(steps=args.steps, seed=args.seed),
                    sampled=args.sampled, samples=args.samples, weak_rule=args.weak_rule,
                    normalize_by_w=args.normalize_by_w, dump_maps=args.dump_maps, overwrite=args.overwrite,
                    progress=progress)
    elif args.command == 'train':
        cmd_train(args.out, args.data, args.seed, dit_config(args), args.checkpoint, args.steps, args.lr,
                  mask=args.mask, scope=ParameterScope[args.scope], guidance=guidance_config(args),
                  flow=FlowConfig(seed=args.seed, t_sampling=args.t_sampling), paths_per_scene=args.paths,
                  weak_rule=args.weak_rule, profile=args.profile, overwrite=args.overwrite, progress=progress)
    elif args.command == 'sample':
        if args.manifest:
            cmd_sample(args.out, manifest=args.manifest, overwrite=args.overwrite, progress=progress)
        else:
            cmd_sample(args.out, args.seed, dit_config(args), args.checkpoint, args.scene,
                       guidance=guidance_config(args), flow=FlowConfig(steps=args.steps, seed=args.seed),
                       diagnostics=args.diagnostics, sampled=args.sampled, weak_rule=args.weak_rule,
                       profile=args.profile, overwrite=args.overwrite, progress=progress)
    elif args.command == 'score':
        scores, report = cmd_score(args.out, args.cases, args.videos, args.external_metrics, args.overwrite)
        for name, value in scores.items():
            print('%-20s %.4f' % (name, value))
        if report is not None:
            print('%-20s %.4f' % ('total', report.total))
    elif args.command == 'table':
        rows, gains = cmd_table(args.out, args.overwrite)
        for model, params, published, recomputed in rows:
            print('%-22s %-5s %.4f %.4f' % (model, params, published, recomputed))
        for guided, baseline, gain in gains:
            print('%s over %s: %+.2f%%' % (guided, baseline, gain))


def configure_logging(args, environ=os.environ):
    level = environ.get('FG_LOG_LEVEL', 'WARNING').upper()
    if args.verbose:
        level = 'DEBUG'
    elif args.quiet:
        level = 'ERROR'
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2
    configure_logging(args)
    try:
        run(args)
    except FocalGuideException as e:
        logger.error('%s', e)
        return e.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())

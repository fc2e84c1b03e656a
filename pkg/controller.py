""" RADD-KG

    Command-line entry point for relation-gated multimodal knowledge
    graph completion with diffusion reranking. Subcommands:

        synth      write a synthetic dataset (3 splits, 2 feature files,
                   manifest)
        train      train the retriever and denoiser jointly into a fresh
                   run directory
        eval       score a checkpoint on a split under an ablation mode
        gradcheck  finite-difference check of every loss term

    Exit codes: 0 success, 2 configuration error, 3 data or checkpoint
    error, 4 numeric failure.
"""

###########
# Imports #
###########
# Import system packages
import argparse
import sys
from dataclasses import replace
from pathlib import Path

# Import custom modules
# Exception imports
from exceptions import config_exceptions
from exceptions import data_exceptions
from exceptions import numeric_exceptions
from exceptions import version_exceptions
# Function imports
from functions import general
# Model imports
from models import checkpoint
from models import evalrank
from models import filehandler
from models import gradcheck
from models import runparsmodel
from models import synthmodel
from models import trainer


#############
# Constants #
#############
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

BEST_CHECKPOINT = 'best.ckpt'
FINAL_CHECKPOINT = 'final.ckpt'
CONFIG_FILE = 'config.txt'
REPORT_TSV = 'report.tsv'
REPORT_TXT = 'report.txt'
TRACE_FILE = 'case_traces.tsv'


#########
# BEGIN #
#########
class Application:
    """ argparse application; run() returns the process exit code. """
    def __init__(self):
        #############
        # Constants #
        #############
        self.NAME = 'RADD-KG'
        self.VERSION = '1.0.0'
        self.EDITED = 'October 19, 2026'

        self._app_info = {
            'name': self.NAME,
            'version': self.VERSION,
            'last_edited': self.EDITED
        }
        self.parser = self._build_parser()


    def _build_parser(self):
        parser = argparse.ArgumentParser(
            prog='controller.py',
            description=f"{self.NAME} {self.VERSION}: retrieve-then-rerank "
                        "knowledge graph completion")
        parser.add_argument('--version', action='version',
                            version=f"{self.NAME} {self.VERSION}")
        commands = parser.add_subparsers(dest='command', required=True)

        # synth
        synth = commands.add_parser('synth', help="write a synthetic dataset")
        synth.add_argument('--out', required=True, help="output directory")
        synth.add_argument('--seed', type=int, default=0)
        synth.add_argument('--manifest', default=None,
                           help="regenerate from an existing manifest")
        defaults = synthmodel.synth_defaults()
        for key, value in defaults.items():
            synth.add_argument(f"--{key.replace('_', '-')}", dest=key,
                               type=type(value), default=value)
        synth.set_defaults(handler=self.cmd_synth)

        # train
        train = commands.add_parser('train', help="train a model")
        train.add_argument('--config', default=None, help="key = value file")
        train.add_argument('--set', action='append', default=[],
                           metavar='KEY=VALUE', help="override one config key")
        train.add_argument('--threads', type=int, default=None)
        train.add_argument('--resume', default=None,
                           help="checkpoint to continue from")
        train.set_defaults(handler=self.cmd_train)

        # eval
        ev = commands.add_parser('eval', help="evaluate a checkpoint")
        ev.add_argument('--checkpoint', required=True)
        ev.add_argument('--config', default=None,
                        help="run config with dataset paths (defaults to "
                             "config.txt next to the checkpoint)")
        ev.add_argument('--set', action='append', default=[],
                        metavar='KEY=VALUE')
        ev.add_argument('--mode', default='full',
                        choices=[m.value for m in evalrank.AblationMode])
        ev.add_argument('--K', type=int, default=None)
        ev.add_argument('--inference', default=None,
                        choices=evalrank.INFERENCE_MODES)
        ev.add_argument('--weights', default=None, choices=trainer.EVAL_WEIGHTS)
        ev.add_argument('--split', default='test',
                        choices=('valid', 'test'))
        ev.add_argument('--threads', type=int, default=None)
        ev.add_argument('--max-queries', type=int, default=0)
        ev.add_argument('--out', default=None, help="report directory")
        ev.add_argument('--trace', type=int, default=0, metavar='N',
                        help="write case traces for N sampled queries")
        ev.set_defaults(handler=self.cmd_eval)

        # gradcheck
        gc = commands.add_parser('gradcheck', help="check analytic gradients")
        dims = gradcheck.GradCheckDims()
        gc.add_argument('--seeds', type=int, default=20)
        gc.add_argument('--entities', type=int, default=dims.n_entities)
        gc.add_argument('--relations', type=int, default=dims.n_relations)
        gc.add_argument('--dim', type=int, default=dims.d)
        gc.add_argument('--max-coords', type=int, default=16)
        gc.add_argument('--tolerance', type=float, default=gradcheck.TOLERANCE)
        gc.add_argument('--floor', type=float, default=gradcheck.FLOOR,
                        help="relative-error denominator floor")
        gc.set_defaults(handler=self.cmd_gradcheck)
        return parser


    def run(self, argv=None):
        args = self.parser.parse_args(argv)
        try:
            return args.handler(args)
        except config_exceptions.ConfigError as e:
            print(e, file=sys.stderr)
            return EXIT_CONFIG
        except (data_exceptions.DataError,
                version_exceptions.CheckpointFormatError,
                FileNotFoundError, PermissionError) as e:
            print(f"controller: {e}", file=sys.stderr)
            return EXIT_DATA
        except numeric_exceptions.NumericError as e:
            print(f"controller: {e}", file=sys.stderr)
            return EXIT_NUMERIC


    ################
    # Subcommands #
    ################
    def cmd_synth(self, args):
        """ Write train/valid/test TSVs, two RVEC1 files and a manifest. """
        if args.manifest:
            seed, params = synthmodel.load_manifest(args.manifest)
        else:
            seed = args.seed
            params = {key: getattr(args, key) for key in synthmodel.synth_defaults()}
        synthmodel.write_dataset(args.out, seed, **params)
        return EXIT_OK


    def _load_pars(self, config_path, overrides, threads):
        pars = runparsmodel.RunParsModel()
        if config_path:
            pars.load(config_path)
        pars.apply_overrides(overrides)
        if threads is not None:
            pars.set('threads', threads)
        return pars


    def cmd_train(self, args):
        """ Train into a fresh run directory holding the best and final
            checkpoints, the training log and the resolved config.
        """
        pars = self._load_pars(args.config, args.set, args.threads)
        pars.validate(check_paths=True)
        kg, features = pars.load_dataset()
        pars.validate(check_paths=False, n_entities=kg.n_entities)

        run_dir = general.unique_directory(pars.get('run_dir'))
        pars.save(run_dir, CONFIG_FILE)
        print(f"controller: Run directory {run_dir}")

        config = pars.to_train_config()
        threads = pars.get('threads')
        if args.resume:
            ckpt = checkpoint.load_checkpoint(args.resume)
            runner = trainer.Trainer.resume(kg, features, ckpt, config, threads,
                                            run_dir)
        else:
            runner = trainer.Trainer(kg, features, config, threads, run_dir)
        best = runner.train()

        checkpoint.save_checkpoint(best, Path(run_dir) / BEST_CHECKPOINT)
        checkpoint.save_checkpoint(runner.final, Path(run_dir) / FINAL_CHECKPOINT)
        return EXIT_OK


    def cmd_eval(self, args):
        """ Filtered metrics for one ablation mode, plus optional case
            traces.
        """
        ckpt_path = Path(args.checkpoint)
        ckpt = checkpoint.load_checkpoint(ckpt_path)

        config_path = args.config
        if config_path is None and (ckpt_path.parent / CONFIG_FILE).exists():
            config_path = ckpt_path.parent / CONFIG_FILE
        pars = self._load_pars(config_path, args.set, args.threads)
        pars.validate(check_paths=True)
        kg, features = pars.load_dataset()
        checkpoint.check_compatible(ckpt, kg.n_entities, kg.n_relations,
                                    features.visual.dim, features.textual.dim,
                                    ckpt_path)

        config = trainer.TrainConfig.from_text(ckpt.config_text)
        changes = {}
        if args.K is not None:
            changes['K'] = args.K
        if args.inference is not None:
            changes['eval_inference'] = args.inference
        if args.weights is not None:
            changes['eval_weights'] = args.weights
        config = replace(config, **changes)
        problems = config.problems(kg.n_entities)
        if problems:
            raise config_exceptions.ConfigError(problems)

        mode = evalrank.AblationMode.from_name(args.mode)
        states = trainer.states_from_checkpoint(ckpt, config.eval_weights, features)
        report = evalrank.evaluate(kg, states, config, mode, args.split,
                                   pars.get('threads'), args.max_queries)

        out_dir = general.unique_directory(
            args.out or ckpt_path.parent / f"eval_{args.split}_{mode.value}")
        filehandler.TSVFile(REPORT_TSV, data_directory=out_dir).save(report.rows())
        values = report.key_values()
        values.update({'split': args.split, 'inference': config.eval_inference,
                       'weights': config.eval_weights,
                       'checkpoint': str(ckpt_path)})
        filehandler.KeyValueFile(REPORT_TXT, header='evaluation report',
                                 data_directory=out_dir).save(values)
        for row in report.rows():
            print('controller: ' + '\t'.join(f"{k}={v}" for k, v in row.items()))
        print(f"controller: shortlist recall at K={config.K}: "
              f"{values['shortlist_recall']}%")

        if args.trace > 0:
            rows = evalrank.case_trace_rows(kg, states, config, args.trace,
                                            args.split, config.seed)
            filehandler.TSVFile(TRACE_FILE, data_directory=out_dir).save(rows)
        print(f"controller: Wrote reports to {out_dir}")
        return EXIT_OK


    def cmd_gradcheck(self, args):
        """ Report per loss term; exit code 4 if any check fails. """
        dims = replace(gradcheck.GradCheckDims(), n_entities=args.entities,
                       n_relations=args.relations, d=args.dim,
                       pool_size=min(4, args.entities))
        report = gradcheck.run_gradcheck(args.seeds, dims,
                                         tolerance=args.tolerance,
                                         max_coords=args.max_coords,
                                         floor=args.floor)
        for row in report.rows():
            print('gradcheck: ' + '\t'.join(f"{k}={v}" for k, v in row.items()))
        report.raise_on_failure()
        return EXIT_OK


def main(argv=None):
    return Application().run(argv)


if __name__ == "__main__":
    sys.exit(main())

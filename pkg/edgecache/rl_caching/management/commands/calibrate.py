from django.conf import settings

from rl_caching.exceptions import ConfigError
from rl_caching.workload import PopularityModel, calibrate_zipf, effective_contents

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Find the Zipf exponent whose effective contents match a target share of the catalog.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--target', type=float, help='Effective-contents fraction (default: effective_target)')
        parser.add_argument('--share', type=float, help='Traffic share (default: traffic_share)')

    def run(self, config, options, run):
        target = options.get('target') if options.get('target') is not None else config.effective_target
        if target is None:
            raise ConfigError("Give --target or effective_target", field='effective_target')
        share = options.get('share') if options.get('share') is not None else config.traffic_share
        run.mark_processing(1)

        s = calibrate_zipf(config.M, target, share)
        achieved = effective_contents(PopularityModel.zipf(config.M, s), share)
        self.stdout.write(
            f"M={config.M} target={target} share={share}: s={s:.6f} "
            f"(effective contents {achieved:.4f}; reference exponent {settings.EDGE_CACHE['REFERENCE_ZIPF_S']})"
        )
        return {'M': config.M, 'target': target, 'share': share, 's': s, 'effective_contents': achieved}

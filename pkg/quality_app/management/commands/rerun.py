# quality_app/management/commands/rerun.py
import json
import tempfile
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import BaseCommand, CommandError

from quality_app.management.base import USAGE_ERROR
from quality_app.utils import MANIFEST_NAME, RunManifest


class Command(BaseCommand):
    help = 'Re-run a command from the manifest.json it wrote'

    def add_arguments(self, parser):
        parser.add_argument('manifest', help='manifest.json or the output directory holding it')
        parser.add_argument('--out', default=None,
                            help="Output directory (default: the manifest's own output directory)")

    def handle(self, *args, **options):
        path = Path(options['manifest'])
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            manifest = RunManifest.read(path)
        except (OSError, ValueError, TypeError) as exc:
            raise CommandError(f"cannot read manifest {path}: {exc}", returncode=USAGE_ERROR) from exc

        replay = {name: value for name, value in manifest.options.items() if value is not None}
        replay['out'] = options['out'] or manifest.output_dir
        with tempfile.TemporaryDirectory() as scratch:
            if manifest.config_option:
                # replay the resolved config, not whatever the original file holds now
                config_path = Path(scratch) / 'config.json'
                config_path.write_text(json.dumps(manifest.config, indent=2, sort_keys=True), encoding='utf-8')
                replay[manifest.config_option] = str(config_path)
            self.stdout.write(f"Re-running {manifest.command} into {replay['out']}")
            call_command(manifest.command, stdout=self.stdout, stderr=self.stderr, **replay)

# quality_app/management/base.py
from django.core.management.base import BaseCommand, CommandError

from quality_app.exceptions import (CheckpointError, ConfigurationError, ContractViolation,
                                    CorpusFormatError, QualityError)
from quality_app.utils import RunManifest

USAGE_ERROR = 1
DATA_ERROR = 2


class QualityCommand(BaseCommand):
    """Base for the pipeline commands.

    Subclasses implement ``run(**options)``. Domain errors become
    ``CommandError`` with exit status 1 for usage/config problems and 2 for
    runtime/data problems.
    """

    manifest_options = ()
    config_option = None

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except CommandError:
            raise
        except ConfigurationError as exc:
            raise CommandError(f"invalid configuration: {exc}", returncode=USAGE_ERROR) from exc
        except (CheckpointError, CorpusFormatError) as exc:
            raise CommandError(str(exc), returncode=DATA_ERROR) from exc
        except (ContractViolation, QualityError) as exc:
            raise CommandError(str(exc), returncode=DATA_ERROR) from exc
        except OSError as exc:
            raise CommandError(f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(': '),
                               returncode=DATA_ERROR) from exc

    def run(self, **options):
        raise NotImplementedError

    def build_manifest(self, options, **fields):
        chosen = {name: options.get(name) for name in self.manifest_options}
        chosen = {name: str(value) if hasattr(value, '__fspath__') else value
                  for name, value in chosen.items()}
        return RunManifest(
            command=self.command_name(),
            options=chosen,
            config_option=self.config_option,
            output_dir=str(options.get('out', '')),
            **fields,
        )

    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))

from config import Config
import logging

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'


def configure_logging(level=None):
    """Configuration unique du logging (niveau par défaut : Config.LOG_LEVEL)"""
    logging.basicConfig(level=(level or Config.LOG_LEVEL).upper(), format=LOG_FORMAT)


def create_cli():
    configure_logging()

    # Import différé : les contextes de processus importent le paquet sans la CLI
    from .cli import cli
    return cli

import os


def _threads_from_env():
    try:
        return max(1, int(os.environ.get('NSISS_THREADS', '1')))
    except ValueError:
        return 1


config = {
    'debug':    False,                # Whether to run extra consistency checks.
    'progress': False,                # Whether to show tqdm bars on long loops.
    'threads':  _threads_from_env(),  # Max workers for sample evaluation.
}


class Config:
    """ Context to change nsiss global config.
    Usage:
    >>> with nsiss.Config(progress=True, threads=4):
    >>>     check_switched_iss(...)
    """
    def __init__(self, **kwargs):
        unknown = set(kwargs) - set(config)
        if unknown:
            raise ValueError("Unknown config keys: {}.".format(sorted(unknown)))
        self.updates = kwargs

    def __enter__(self):
        self.old_config = config.copy()
        config.update(self.updates)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        config.clear()
        config.update(self.old_config)

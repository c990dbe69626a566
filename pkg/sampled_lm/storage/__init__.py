from . import checkpoint, corpus_files, reports
from .exceptions import StorageError

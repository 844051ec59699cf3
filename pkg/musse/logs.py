# -*- coding: utf-8 -*-

"""
JSON-lines logging.
"""

from typing import Any, Dict, IO, Iterable, List, Optional, Union
import os
import sys
import json
import logging
import datetime

# attributes every LogRecord has; anything else came in through `extra`
_RECORD_ATTRS = frozenset(vars(logging.LogRecord('', 0, '', 0, '', (), None))) | {'message', 'asctime'}


class JsonLinesFormatter(logging.Formatter):
    """
    One json object per record with time, level, logger, message and the `extra` fields.
    """
    def format(self, record: logging.LogRecord) -> str:
        data: Dict[str, Any] = {
            "time": datetime.datetime.fromtimestamp(record.created, datetime.timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key, value in vars(record).items():
            if key not in _RECORD_ATTRS and not key.startswith('_'):
                data[key] = value
        if record.exc_info:
            data["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(data, default=str, ensure_ascii=False)


def setup_logging(level: Union[int, str] = logging.INFO, stream: Optional[IO[str]] = None) -> logging.Handler:
    """
    Route the root logger to `stream` (stderr by default) as json lines.
    """
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLinesFormatter())
    root = logging.getLogger()
    for old in list(root.handlers):
        if isinstance(old.formatter, JsonLinesFormatter):
            root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(level)
    return handler


class LossTraceWriter:
    """
    Appends one json line per training iteration to a trace file.
    """
    def __init__(self, path: Union[str, os.PathLike]):
        self.path = os.fspath(path)
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)

    def write(self, record: Dict[str, Any]):
        with open(self.path, 'a', encoding='utf-8', newline='\n') as f:
            f.write(json.dumps(record, sort_keys=True) + '\n')

    __call__ = write

    def read(self) -> List[Dict[str, Any]]:
        if not os.path.exists(self.path):
            return []
        with open(self.path, encoding='utf-8') as f:
            return [json.loads(line) for line in f if line.strip()]

    def truncate(self, keep: Iterable[Dict[str, Any]]):
        """
        Replace the trace with the given records.
        """
        with open(self.path, 'w', encoding='utf-8', newline='\n') as f:
            for record in keep:
                f.write(json.dumps(record, sort_keys=True) + '\n')

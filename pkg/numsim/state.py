from io import BytesIO
from pathlib import PurePath
from typing import IO, Dict, Iterable, Iterator, List, Tuple, Union

import attr
from attr import attrib, attrs
from h5py import File as H5File
from h5py import Group, string_dtype
import numpy as np

from numsim.validation import ValidationError

Columns = Dict[str, np.ndarray]


@attrs(auto_attribs=True, repr=False, eq=False)
class EnsembleState(object):
    """Per-path summaries of a simulated ensemble.

    Columns are arrays whose first axis is the path index.  Column names use
    ``/`` to nest, which maps directly onto HDF5 groups.
    """

    config: str
    columns: Columns = attrib(factory=dict)

    @columns.validator
    def _check_columns(self, attribute: attr.Attribute, value: Columns) -> None:
        lengths = {key: array.shape[0] for key, array in value.items()}
        if len(set(lengths.values())) > 1:
            raise ValidationError(f'columns differ in length: {lengths}')

    @property
    def n_paths(self) -> int:
        if not self.columns:
            return 0
        return next(iter(self.columns.values())).shape[0]

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self.columns[key]
        except KeyError:
            raise KeyError(f'ensemble has no column "{key}"')

    def __contains__(self, key: str) -> bool:
        return key in self.columns

    def names(self, prefix: str) -> List[str]:
        """Return the last name component of all columns below ``prefix``, in order."""
        prefix = prefix.rstrip('/') + '/'
        return [key[len(prefix) :] for key in self.columns if key.startswith(prefix)]

    @classmethod
    def from_chunks(cls, config: str, chunks: Iterable[Columns]) -> 'EnsembleState':
        """Concatenate chunk columns in the order given."""
        parts: Dict[str, List[np.ndarray]] = {}
        for chunk in chunks:
            for key, array in chunk.items():
                parts.setdefault(key, []).append(array)
        return cls(config=config, columns={key: np.concatenate(v) for key, v in parts.items()})

    @classmethod
    def load(cls, arg: Union[str, bytes, PurePath, IO[bytes]]) -> 'EnsembleState':
        """Load an archive from either a path, a file, or blob of bytes."""
        if isinstance(arg, bytes):
            arg = BytesIO(arg)

        with H5File(arg, 'r') as hf:
            config = _text(hf.attrs['config'])
            order = [_text(key) for key in hf.attrs['columns']]
            datasets = dict(_walk(hf))
            missing = set(order) - set(datasets)
            if missing:
                raise ValueError(f'File contains no dataset for {sorted(missing)}')
            return cls(config=config, columns={key: datasets[key] for key in order})

    def save(self, arg: Union[str, PurePath, IO[bytes]]) -> None:
        """Save the ensemble to the file system."""
        with H5File(arg, 'w') as hf:
            hf.attrs['config'] = self.config
            hf.attrs.create('columns', list(self.columns), dtype=string_dtype())
            for key, array in self.columns.items():
                hf.create_dataset(key, data=array)

    def serialize(self) -> bytes:
        """Return a serialized representation of the ensemble."""
        f = BytesIO()
        self.save(f)
        return f.getvalue()

    def __repr__(self):
        return f'EnsembleState(n_paths={self.n_paths}, columns={len(self.columns)})'


def _text(value) -> str:
    return value.decode() if isinstance(value, bytes) else str(value)


def _walk(group: Group, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
    for name, item in group.items():
        key = f'{prefix}{name}'
        if isinstance(item, Group):
            yield from _walk(item, f'{key}/')
        else:
            yield key, np.array(item)

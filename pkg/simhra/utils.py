import logging
import os
import re
import tempfile
from pathlib import Path
from typing import Union

logging.captureWarnings(True)  # captures into py.warnings
logger = logging.getLogger('simhra')

_FENCE = re.compile(r"^```[a-zA-Z]*\s*\n?(.*?)\n?```$", re.DOTALL)


class Graph:
    """ Graph

    Directed graph without repeated edges, used to record who put directive pressure on whom during a run.
    Nodes keep their insertion order.

    Attributes:
        edges_out (dict): node -> list of successors, in insertion order
        edges_in (dict): node -> list of predecessors, in insertion order
    """

    def __init__(self):
        self.edges_out = {}
        self.edges_in = {}

    def add_node(self, node):
        self.edges_out.setdefault(node, [])
        self.edges_in.setdefault(node, [])

    def add_edge(self, source, target):
        self.add_node(source)
        self.add_node(target)
        if not self.has_edge(source, target):
            self.edges_out[source].append(target)
            self.edges_in[target].append(source)

    def has_edge(self, source, target) -> bool:
        return target in self.edges_out.get(source, ())

    def chain_depth(self, chain):
        """ number of consecutive edges of `chain` present in the graph, starting from its first node

        Example:
            with edges `a->b` and `b->c`, `chain_depth(["a","b","c"]) == 2`, while with only `b->c` the depth
            is `0` because the chain is broken at its root.

        Args:
            chain (`List`): ordered list of nodes

        Returns:
            depth (`int`): length of the longest prefix of `chain` connected by edges
        """
        depth = 0
        for node1, node2 in zip(chain, chain[1:]):
            if not self.has_edge(node1, node2):
                break
            depth += 1
        return depth


def as_list(items) -> list:
    """ `None` -> `[]`, a list, tuple or dict (its keys) -> list, anything else -> one-element list """
    if items is None:
        return []
    if isinstance(items, (list, tuple, dict)):
        return list(items)
    return [items]


def strip_fence(text: str) -> str:
    """ model answer without surrounding whitespace and without a markdown code fence around it, if any """
    text = text.strip()
    fenced = _FENCE.match(text)
    return fenced.group(1).strip() if fenced else text


def write_atomic(path: Union[str, Path], content: str):
    """ writes text content to a file atomically

    the content is first written to a temporary file in the target directory and then renamed over the target
    path, readers never observe a half-written file.

    Args:
        path: target file path
        content (`str`): text to be written
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def ensure_writable(directory: Union[str, Path]):
    """ creates `directory` if needed and checks that files can be created in it

    Raises:
        OSError: if the directory can't be created or written to
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fd, scratch = tempfile.mkstemp(dir=str(directory), prefix=".writable")
    os.close(fd)
    os.remove(scratch)
    return directory


__all__ = [
    "Graph",
    "as_list",
    "strip_fence",
    "write_atomic",
    "ensure_writable"
]

import collections

import pytest

from morpheus_sim.trace import MemoryRequest, Op


class ListLru:
    """Reference LRU set: most recent last, linear scans only."""

    def __init__(self, ways):
        self.ways = ways
        self.order = []

    def access(self, tag):
        if tag in self.order:
            self.order.remove(tag)
            self.order.append(tag)
            return True, None
        victim = None
        if len(self.order) == self.ways:
            victim = self.order.pop(0)
        self.order.append(tag)
        return False, victim

    def __contains__(self, tag):
        return tag in self.order


class OrderedLru:
    """Same contract as ListLru, O(1) per access, for long fuzz runs."""

    def __init__(self, ways):
        self.ways = ways
        self.d = collections.OrderedDict()

    def access(self, tag):
        if tag in self.d:
            self.d.move_to_end(tag)
            return True, None
        victim = None
        if len(self.d) == self.ways:
            victim, _ = self.d.popitem(last=False)
        self.d[tag] = None
        return False, victim

    def __contains__(self, tag):
        return tag in self.d


def req(i, op, address, cycle=None, sm=0, size=4, operands=()):
    return MemoryRequest(i, i if cycle is None else cycle, sm, op, address, size, tuple(operands))


@pytest.fixture
def read():
    return lambda i, a, **kw: req(i, Op.READ, a, **kw)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

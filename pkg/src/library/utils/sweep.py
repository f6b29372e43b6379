class SweepGrid:
    """
    Iterates every combination of experiment parameters
    """

    def __init__(self, grid: dict):
        """
        :param grid: parameter name -> list of values, e.g. {"n_cells": [8, 16], "pipeline": ["narrow"]}
        """
        self._keys: list = list(grid.keys())
        self._values: list = [list(v) for v in grid.values()]
        self._combinations: list = []

    def __iter__(self):
        """
        Builds the combinations, the first key varies fastest
        :return: self
        """
        self._combinations = [[]]
        for ls in self._values:
            self._combinations = [comb + [item] for item in ls for comb in self._combinations]
        if not self._keys:
            self._combinations = []
        return self

    def __next__(self) -> dict:
        """
        :return: next combination as a dict
        """
        if len(self._combinations) > 0:
            return dict(zip(self._keys, self._combinations.pop(0)))
        raise StopIteration()

    def __len__(self) -> int:
        size = 1 if self._keys else 0
        for ls in self._values:
            size *= len(ls)
        return size

import doctest
import importlib
import pkgutil

import pytest

import ritzlab

MODULES = sorted(m.name for m in pkgutil.iter_modules(ritzlab.__path__, "ritzlab."))


@pytest.mark.parametrize("name", MODULES)
def test_docstring_examples(name):
    result = doctest.testmod(importlib.import_module(name), optionflags=doctest.ELLIPSIS)
    assert result.failed == 0

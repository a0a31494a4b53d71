"""libforge: refactor related source files into a shared library.

Samples candidate refactorings from a language-model gateway, reranks
them under compression metrics (description length, tokens, cyclomatic
complexity, maintainability index), and guarantees that rewritten files
pass at least the tests the originals passed.
"""

__version__ = "0.1.0"

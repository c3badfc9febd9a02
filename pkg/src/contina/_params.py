"""Parameter introspection mixin following the scikit-learn estimator protocol.

Objects whose ``__init__`` stores every keyword argument under an attribute of
the same name get working ``get_params`` / ``set_params`` for free, which is
enough for ``sklearn.base.clone`` and pipeline-style composition without
importing scikit-learn here.
"""

import inspect


class ParamsMixin:
    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]

    def get_params(self, deep=True):
        """Return constructor parameters as a dict (sklearn convention)."""
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        """Set constructor parameters; unknown names raise ValueError."""
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

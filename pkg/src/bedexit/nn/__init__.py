"""Numpy autodiff core and the two neural classifiers."""

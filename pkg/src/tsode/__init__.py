"""Time series forecasting with linear ODEs: neural ODE training, spectra and closed-form solutions."""

from .closed_form import ClosedFormForecaster, ClosedFormModel, evaluate, fit_closed_form, forecast, train_encoder
from .linear_node import LinearOdeSystem, train_linear_node
from .ode import integrate, grad_through_solver
from .series import TimeSeries, load_csv, synth
from .spectrum import companion_from_char_poly, eigenvalues, solution_form_report

__version__ = "0.1.0"

__all__ = [
    "ClosedFormForecaster",
    "ClosedFormModel",
    "LinearOdeSystem",
    "TimeSeries",
    "companion_from_char_poly",
    "eigenvalues",
    "evaluate",
    "fit_closed_form",
    "forecast",
    "grad_through_solver",
    "integrate",
    "load_csv",
    "solution_form_report",
    "synth",
    "train_encoder",
    "train_linear_node",
]

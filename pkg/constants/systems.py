"""Catalog of the built-in Hamiltonians.

Expressions are polynomials in the canonical coordinates. One degree of freedom
uses the bare names ``p`` and ``q``; more use ``p1..pN``, ``q1..qN``. The
driving time is ``t`` (``tau`` is accepted as an alias).
"""


class BuiltinSystem:
    """Entry of the built-in catalog"""

    def __init__(self, name, expression, params=None, dof=1, description=""):
        self.name = name
        self.expression = expression
        self.params = dict(params or {})
        self.dof = dof
        self.description = description

    def __repr__(self):
        return f"BuiltinSystem({self.name}: {self.expression}, params={self.params}, dof={self.dof})"


BUILTIN_SYSTEMS = {
    entry.name: entry for entry in [
        BuiltinSystem(
            "harmonic", "(p**2 + a*q**2)/2", {"a": 1.0},
            description="Simple harmonic oscillator with stiffness a."
        ),
        BuiltinSystem(
            "displaced_oscillator", "(a*p**2 + (q - b)**2)/2", {"a": 0.5, "b": 1.0},
            description="Oscillator with mass 1/a displaced to q=b, driving partner of `harmonic`."
        ),
        BuiltinSystem(
            "displaced_quadratic", "(a*p**2 + (q - b)**2)/2", {"a": 1.0, "b": 0.5},
            description="Generic displaced quadratic driving."
        ),
        BuiltinSystem(
            "duffing", "p**2/2 + k*q**2/2 + q**4/4", {"k": 0.0},
            description="Quartic (Duffing) oscillator, pure quartic for k=0."
        ),
        BuiltinSystem(
            "displaced_duffing", "a*p**2/2 + (q - b)**4/4", {"a": 1.0, "b": 0.5},
            description="Quartic oscillator displaced to q=b."
        ),
        BuiltinSystem(
            "double_well", "p**2/2 - q**2/2 + c*q**4/4", {"c": 1.0},
            description="Symmetric double well."
        ),
        BuiltinSystem(
            "coupled_quartic", "(p1**2 + p2**2)/2 + (q1**2 + w**2*q2**2)/2 + g*q1**2*q2**2",
            {"w": 1.3, "g": 0.1}, dof=2,
            description="Pair of anharmonically coupled oscillators."
        ),
        BuiltinSystem(
            "displaced_coupled", "(a*(p1**2 + p2**2) + (q1 - b)**2 + (q2 - c)**2)/2",
            {"a": 0.5, "b": 1.0, "c": 0.5}, dof=2,
            description="Displaced isotropic oscillator driving partner of `coupled_quartic`."
        ),
    ]
}

# Time factors f(t) available for the perturbative driving H + eta*f(t)*h.
TIME_FACTORS = {
    "constant": "1",
    "sin": "sin(omega*t)",
}

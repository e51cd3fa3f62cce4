"""Physical constants shared by all model components."""

FARADAY = 96485.33      # C/mol
GAS_CONSTANT = 8.314462  # J/(mol K)

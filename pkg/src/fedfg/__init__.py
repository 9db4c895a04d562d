"""Flow-matching verified robust federated learning simulator."""

# Stochastic motion prediction

# Join model, heavy-hitter statistics, share planning and the simulated shuffle

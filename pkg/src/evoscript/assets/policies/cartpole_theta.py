# behavior: cartpole-theta
def choose_action(x, x_dot, theta, theta_dot):
    # Chase the pole angle only; ignores velocities, so it overshoots.
    return 1 if theta > 0 else 0

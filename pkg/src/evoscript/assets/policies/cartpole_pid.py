# behavior: cartpole-pid
def choose_action(x, x_dot, theta, theta_dot):
    # PD control on the pole angle with a weak cart-recentering term.
    # Positive u means the pole is falling to the right, so push right.
    u = 0.5 * x + 1.0 * x_dot + 20.0 * theta + 2.0 * theta_dot
    return 1 if u > 0 else 0

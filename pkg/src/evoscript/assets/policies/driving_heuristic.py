# behavior: driving-heuristic
import math


def drive(ego, actors, distance_to_red_light_m, distance_to_stop_sign_m, target_waypoint):
    ex, ey = ego["location"]
    heading = math.radians(ego["orientation_deg"])

    # Closest hazard ahead: actors within a forward half-plane, plus controls.
    hazard = float("inf")
    for actor in actors:
        ax, ay = actor["location"]
        dx, dy = ax - ex, ay - ey
        ahead = dx * math.cos(heading) + dy * math.sin(heading)
        if ahead <= 0:
            continue
        gap = math.hypot(dx, dy) - 0.5 * (ego["length_m"] + actor["length_m"])
        hazard = min(hazard, gap)
    for distance in (distance_to_red_light_m, distance_to_stop_sign_m):
        if distance is not None:
            hazard = min(hazard, distance)

    if hazard < 2.0:
        level = "STOP"
    elif hazard < 14.0:  # 2 s margin at cruise speed plus the stop gap
        level = "SLOW"
    else:
        level = "MOVE"

    wx, wy = target_waypoint
    desired = math.degrees(math.atan2(wy - ey, wx - ex))
    angle = (desired - ego["orientation_deg"] + 180.0) % 360.0 - 180.0
    return {"speed_level": level, "angle_deg": angle}

use crate::WorldError;

/// Angle of a looping linear rotation at time `t_ms`.
pub fn animate_rotation(
    from_deg: f64,
    to_deg: f64,
    duration_ms: f64,
    t_ms: f64,
) -> Result<f64, WorldError> {
    if !(duration_ms > 0.0) || !duration_ms.is_finite() {
        return Err(WorldError::InvalidAnimation(format!(
            "duration must be positive, got {duration_ms}"
        )));
    }
    if !(t_ms >= 0.0) || !t_ms.is_finite() {
        return Err(WorldError::InvalidAnimation(format!(
            "time must be non-negative, got {t_ms}"
        )));
    }
    let phase = (t_ms % duration_ms) / duration_ms;
    Ok(from_deg + (to_deg - from_deg) * phase)
}

#include "gazekit/types.hpp"

#include <cmath>
#include <string>

#include "gazekit/error.hpp"

namespace gazekit {

std::string_view to_string(Highlight ht) noexcept {
    switch (ht) {
        case Highlight::Absent: return "Absent";
        case Highlight::Static: return "Static";
        case Highlight::Dynamic: return "Dynamic";
    }
    return "Absent";
}

std::string_view to_string(CognitiveLoad cl) noexcept {
    switch (cl) {
        case CognitiveLoad::Absent: return "Absent";
        case CognitiveLoad::Low: return "Low";
        case CognitiveLoad::High: return "High";
    }
    return "Absent";
}

Highlight parse_highlight(std::string_view s) {
    if (s == "Absent") return Highlight::Absent;
    if (s == "Static") return Highlight::Static;
    if (s == "Dynamic") return Highlight::Dynamic;
    throw ValidationError("unknown highlight condition '" + std::string(s) + "'");
}

CognitiveLoad parse_load(std::string_view s) {
    if (s == "Absent") return CognitiveLoad::Absent;
    if (s == "Low") return CognitiveLoad::Low;
    if (s == "High") return CognitiveLoad::High;
    throw ValidationError("unknown cognitive-load condition '" + std::string(s) + "'");
}

ScreenGeometry ScreenGeometry::from_diagonal(double diagonal_in, double w_px, double h_px,
                                             double distance_cm) {
    const double diag_cm = diagonal_in * 2.54;
    const double diag_px = std::hypot(w_px, h_px);
    return ScreenGeometry{w_px, h_px, diag_cm * w_px / diag_px, diag_cm * h_px / diag_px,
                          distance_cm};
}

void ScreenGeometry::validate() const {
    const double fields[] = {screen_w_px, screen_h_px, screen_w_cm, screen_h_cm,
                             viewing_distance_cm};
    for (double f : fields) {
        if (!(f > 0.0) || !std::isfinite(f))
            throw ValidationError("screen geometry fields must be positive and finite");
    }
}

}  // namespace gazekit

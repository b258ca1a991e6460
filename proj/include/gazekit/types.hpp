#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace gazekit {

// Half-open pixel rectangle [x, x+w) x [y, y+h).
struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool contains(double px, double py) const noexcept {
        return px >= x && px < x + w && py >= y && py < y + h;
    }
    long long area() const noexcept { return static_cast<long long>(w) * h; }

    friend bool operator==(const Rect&, const Rect&) = default;
};

inline long long intersection_area(const Rect& a, const Rect& b) noexcept {
    const int x0 = std::max(a.x, b.x);
    const int y0 = std::max(a.y, b.y);
    const int x1 = std::min(a.x + a.w, b.x + b.w);
    const int y1 = std::min(a.y + a.h, b.y + b.h);
    if (x1 <= x0 || y1 <= y0) return 0;
    return static_cast<long long>(x1 - x0) * (y1 - y0);
}

enum class Highlight { Absent, Static, Dynamic };
enum class CognitiveLoad { Absent, Low, High };

std::string_view to_string(Highlight ht) noexcept;
std::string_view to_string(CognitiveLoad cl) noexcept;
// Throws ValidationError on unknown labels.
Highlight parse_highlight(std::string_view s);
CognitiveLoad parse_load(std::string_view s);

struct ScreenGeometry {
    double screen_w_px = 2560;
    double screen_h_px = 1440;
    double screen_w_cm = 56.45;
    double screen_h_cm = 31.75;
    double viewing_distance_cm = 70;

    // Physical size from a diagonal in inches, assuming square pixels.
    static ScreenGeometry from_diagonal(double diagonal_in, double w_px, double h_px,
                                        double distance_cm);
    void validate() const;
};

}  // namespace gazekit

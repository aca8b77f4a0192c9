#include "slhsi/pattern.hpp"

#include <algorithm>
#include <cmath>

#include "slhsi/error.hpp"

namespace slhsi {

void SpotPatternSpec::validate() const {
    if (spots.empty() || static_cast<int>(spots.size()) > kMaxSpots) {
        throw Error(ErrorCode::InvalidArgument, "pattern must hold 1..171 spots");
    }
    std::vector<double> wl;
    wl.reserve(spots.size());
    for (const auto& s : spots) {
        const auto& p = s.projector_pixel;
        if (p.x() < 0 || p.y() < 0 || p.x() > projector_width - 1 || p.y() > projector_height - 1) {
            throw Error(ErrorCode::InvalidArgument, "pattern spot outside projector image");
        }
        wl.push_back(s.wavelength_nm);
    }
    std::sort(wl.begin(), wl.end());
    if (std::adjacent_find(wl.begin(), wl.end()) != wl.end()) {
        throw Error(ErrorCode::InvalidArgument, "pattern wavelengths must be distinct");
    }
}

// Piecewise-linear spectral locus approximation (after D. Bruton), with the
// intensity roll-off near the ends of the visible range.
Eigen::Vector3d wavelength_to_rgb(double nm) {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;
    if (nm >= 380 && nm < 440) {
        r = -(nm - 440) / 60.0;
        b = 1.0;
    } else if (nm >= 440 && nm < 490) {
        g = (nm - 440) / 50.0;
        b = 1.0;
    } else if (nm >= 490 && nm < 510) {
        g = 1.0;
        b = -(nm - 510) / 20.0;
    } else if (nm >= 510 && nm < 580) {
        r = (nm - 510) / 70.0;
        g = 1.0;
    } else if (nm >= 580 && nm < 645) {
        r = 1.0;
        g = -(nm - 645) / 65.0;
    } else if (nm >= 645 && nm <= 780) {
        r = 1.0;
    }
    double factor = 0.0;
    if (nm >= 380 && nm < 420) {
        factor = 0.3 + 0.7 * (nm - 380) / 40.0;
    } else if (nm >= 420 && nm <= 700) {
        factor = 1.0;
    } else if (nm > 700 && nm <= 780) {
        factor = 0.3 + 0.7 * (780 - nm) / 80.0;
    }
    return Eigen::Vector3d(r, g, b) * factor;
}

}  // namespace slhsi

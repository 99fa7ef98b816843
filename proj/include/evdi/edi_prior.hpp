// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "evdi/common.hpp"
#include "evdi/dataio.hpp"
#include "evdi/integrator.hpp"

namespace evdi {

/// Checks that the event span covers the exposure of every view.
inline void check_view_coverage(const DatasetManifest& m, const EventStream& events) {
  const double half = static_cast<double>(m.exposure_us) / 2.0;
  for (std::size_t k = 0; k < m.views.size(); ++k) {
    const double lo = static_cast<double>(m.views[k].t_mid_us) - half;
    const double hi = static_cast<double>(m.views[k].t_mid_us) + half;
    if (!events.coverage().covers(lo, hi)) {
      throw ArgumentError(detail::concat("view ", k, " (", m.views[k].blur, "): exposure [", lo, ", ",
                                         hi, "] not covered by events [", events.coverage().begin,
                                         ", ", events.coverage().end, "]"));
    }
  }
}

/// Writes the double-integral latent of every view as edi_NNNN.pfm in linear
/// units. Bayer datasets keep the mosaic, one channel per pixel.
inline std::vector<fs::path> edi_prior_images(const DatasetManifest& m, const fs::path& out_dir) {
  const EventStream events = load_events(m);
  check_view_coverage(m, events);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw FormatError(detail::concat("cannot create '", out_dir.string(), "': ", ec.message()));
  const EventLayout layout{m.bayer};
  std::vector<fs::path> written;
  for (std::size_t k = 0; k < m.views.size(); ++k) {
    const LoadedView v = load_view(m, k);
    const ImageBuffer latent = edi_deblur(v.blur, events, v.t_mid, m.exposure_us, m.thresholds(), layout);
    fs::path path = out_dir / detail::numbered_name("edi_", k, ".pfm");
    write_pfm(path, latent);
    written.push_back(std::move(path));
  }
  return written;
}

}  // namespace evdi

#pragma once

// 2-D electrode layouts and the default multivariate channel selection.

#include "envtrack/core.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace envtrack {

struct ChannelPosition {
    std::string name;
    double x = 0.0;  // right is positive
    double y = 0.0;  // nose is positive
};

using Layout = std::vector<ChannelPosition>;

/// BioSemi 64-channel cap projected to 2-D (azimuthal projection of the standard
/// spherical coordinates, unit = 92 degrees of inclination). A reconstruction from the
/// manufacturer's published coordinates, not a digitized montage.
const Layout& biosemi64_layout();

/// CSV with header `name,x,y`.
Layout load_layout_csv(const std::filesystem::path& path);
void save_layout_csv(const Layout& layout, const std::filesystem::path& path);

/// "builtin:biosemi64" or a CSV path (relative paths resolved against `root`).
Layout resolve_layout(const std::string& spec, const std::filesystem::path& root = {});

/// Layout restricted to (and ordered like) `channels`; throws if any is missing.
Layout subset_layout(const Layout& layout, const std::vector<std::string>& channels);

/// Fronto-central and parieto-occipital channels of the BioSemi-64 cap.
ChannelSelection default_channel_selection();

}  // namespace envtrack

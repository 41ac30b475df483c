#pragma once

// Volume I/O: NIfTI-1 (.nii / .nii.gz) and a raw+json sidecar format.
//
// raw+json: `<stem>.json` holds {"shape":[H,W,D], "spacing":[sx,sy,sz],
// "dtype":"f32"} and `<stem>.raw` holds the little-endian float32 buffer in
// x-fastest order. Displacement fields add "components": 3 and store the
// three component planes back to back.

#include <filesystem>
#include <vector>

#include "ttoreg/volume.hpp"

namespace ttoreg {

enum class VolumeFormat { Nifti, RawJson };

/// Picks the format from the file extension (.nii, .nii.gz, .json, .raw).
VolumeFormat format_from_path(const std::filesystem::path& path);

/// Adds the conventional extension for the format if `path` has none.
std::filesystem::path with_format_extension(std::filesystem::path path, VolumeFormat format);

Volume3D load_volume(const std::filesystem::path& path);
Volume3D load_volume(const std::filesystem::path& path, VolumeFormat format);
void save_volume(const Volume3D& vol, const std::filesystem::path& path);
void save_volume(const Volume3D& vol, const std::filesystem::path& path, VolumeFormat format);

Field3D load_field(const std::filesystem::path& path);
void save_field(const Field3D& field, const Spacing3& spacing, const std::filesystem::path& path,
                VolumeFormat format);

/// Loads a time series: a 4D NIfTI file (one volume per frame) or a directory
/// of volume files taken in lexicographic filename order.
std::vector<Volume3D> load_series(const std::filesystem::path& path);

/// Lists volume files inside a directory, sorted by name.
std::vector<std::filesystem::path> list_volume_files(const std::filesystem::path& dir);

}  // namespace ttoreg

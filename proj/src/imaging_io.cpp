#include "nodseg/imaging_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nodseg/error.hpp"

namespace nodseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "raw patch files are little-endian; big-endian hosts need byte swapping");

bool SlicePatch::mask_nonempty() const {
  return std::any_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; });
}

std::string validate_patch(const SlicePatch& patch) {
  if (patch.height <= 0 || patch.width <= 0) return "non-positive patch size";
  if (patch.image.size() != patch.pixel_count()) return "image size does not match height*width";
  if (patch.mask.size() != patch.pixel_count()) return "mask size does not match height*width";
  for (float v : patch.image)
    if (!(v >= 0.0f && v <= 1.0f)) return "image value outside [0,1]";
  for (std::uint8_t v : patch.mask)
    if (v > 1) return "mask value outside {0,1}";
  if (patch.class_label != (patch.mask_nonempty() ? 1 : 0))
    return "class_label disagrees with mask emptiness";
  return {};
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<double> parse_numbers(const std::string& value, const std::string& key) {
  std::istringstream in(value);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      throw FormatError("MetaImage key " + key + ": not a number: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

bool parse_bool(const std::string& v) {
  std::string lower = v;
  std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
  return lower == "true" || lower == "1";
}

struct ElementType {
  std::size_t size;
  float (*convert)(const unsigned char*);
};

template <typename T>
float convert_as(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return static_cast<float>(v);
}

ElementType element_type(const std::string& name) {
  static const std::map<std::string, ElementType> types = {
      {"MET_UCHAR", {1, &convert_as<std::uint8_t>}},  {"MET_CHAR", {1, &convert_as<std::int8_t>}},
      {"MET_USHORT", {2, &convert_as<std::uint16_t>}}, {"MET_SHORT", {2, &convert_as<std::int16_t>}},
      {"MET_UINT", {4, &convert_as<std::uint32_t>}},   {"MET_INT", {4, &convert_as<std::int32_t>}},
      {"MET_FLOAT", {4, &convert_as<float>}},          {"MET_DOUBLE", {8, &convert_as<double>}},
  };
  auto it = types.find(name);
  if (it == types.end()) throw FormatError("unsupported MetaImage ElementType " + name);
  return it->second;
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

ScanVolume read_metaimage(const fs::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw IoError("cannot open MetaImage header " + header_path.string());

  std::map<std::string, std::string> header;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    header[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }

  auto require = [&](const std::string& key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end())
      throw FormatError("MetaImage header " + header_path.string() + " lacks " + key);
    return it->second;
  };

  const auto dims = parse_numbers(require("DimSize"), "DimSize");
  const auto spacing = parse_numbers(require("ElementSpacing"), "ElementSpacing");
  const auto type = element_type(require("ElementType"));
  const std::string data_file = require("ElementDataFile");

  if (header.count("CompressedData") && parse_bool(header["CompressedData"]))
    throw FormatError("compressed MetaImage payloads are not supported: " + header_path.string());
  if (dims.size() != 3) throw FormatError("MetaImage DimSize must have 3 components");
  if (spacing.size() != 3) throw FormatError("MetaImage ElementSpacing must have 3 components");
  if (data_file == "LOCAL" || data_file == "LIST")
    throw FormatError("MetaImage ElementDataFile must name a separate raw file");

  std::vector<double> offset{0.0, 0.0, 0.0};
  for (const char* key : {"Offset", "Origin", "Position"}) {
    if (header.count(key)) {
      offset = parse_numbers(header[key], key);
      if (offset.size() != 3) throw FormatError(std::string("MetaImage ") + key + " must have 3 components");
      break;
    }
  }
  bool msb = false;
  for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"})
    if (header.count(key)) msb = parse_bool(header[key]);

  ScanVolume vol;
  for (int a = 0; a < 3; ++a) {
    const double d = dims[2 - a];
    if (d < 1 || d != static_cast<double>(static_cast<std::int64_t>(d)))
      throw FormatError("MetaImage DimSize components must be positive integers");
    vol.shape[a] = static_cast<std::int64_t>(d);
    vol.spacing[a] = spacing[2 - a];
    vol.origin[a] = offset[2 - a];
    if (!(vol.spacing[a] > 0.0)) throw FormatError("MetaImage ElementSpacing must be positive");
  }
  vol.series_id = header_path.stem().string();

  const fs::path raw_path = header_path.parent_path() / data_file;
  const auto bytes = read_file(raw_path);
  const std::size_t count = static_cast<std::size_t>(vol.voxel_count());
  if (bytes.size() != count * type.size)
    throw TruncationError("raw file " + raw_path.string() + " has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(count * type.size));

  vol.voxels.resize(count);
  std::vector<unsigned char> scratch(type.size);
  for (std::size_t i = 0; i < count; ++i) {
    const auto* src = reinterpret_cast<const unsigned char*>(bytes.data()) + i * type.size;
    if (msb) {
      std::reverse_copy(src, src + type.size, scratch.begin());
      vol.voxels[i] = type.convert(scratch.data());
    } else {
      vol.voxels[i] = type.convert(src);
    }
  }
  return vol;
}

void write_metaimage(const ScanVolume& volume, const fs::path& header_path) {
  if (volume.voxels.size() != static_cast<std::size_t>(volume.voxel_count()))
    throw ParameterError("voxel buffer does not match volume shape");
  const fs::path raw_path = fs::path(header_path).replace_extension(".raw");
  {
    std::ofstream out(header_path);
    if (!out) throw IoError("cannot write " + header_path.string());
    out.precision(17);
    out << "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n"
        << "CompressedData = False\n"
        << "Offset = " << volume.origin[2] << ' ' << volume.origin[1] << ' ' << volume.origin[0] << '\n'
        << "ElementSpacing = " << volume.spacing[2] << ' ' << volume.spacing[1] << ' ' << volume.spacing[0]
        << '\n'
        << "DimSize = " << volume.shape[2] << ' ' << volume.shape[1] << ' ' << volume.shape[0] << '\n'
        << "ElementType = MET_FLOAT\nElementDataFile = " << raw_path.filename().string() << '\n';
  }
  write_float_raw(raw_path, volume.voxels);
}

AnnotationTable read_annotations(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open annotation table " + csv_path.string());

  auto split = [](const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
  };

  std::string line;
  if (!std::getline(in, line)) throw FormatError("annotation table is empty: " + csv_path.string());
  const auto columns = split(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw FormatError("annotation table lacks column " + name);
    return static_cast<std::size_t>(it - columns.begin());
  };
  const std::size_t c_id = column("seriesuid"), c_x = column("coordX"), c_y = column("coordY"),
                    c_z = column("coordZ"), c_d = column("diameter_mm");

  AnnotationTable table;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    auto number = [&](std::size_t idx, double& out) {
      if (idx >= fields.size()) return false;
      const auto& s = fields[idx];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
    };
    double x, y, z, d;
    if (fields.size() != columns.size() || fields[c_id].empty() || !number(c_x, x) || !number(c_y, y) ||
        !number(c_z, z) || !number(c_d, d) || !(d > 0.0)) {
      ++table.rejected;
      continue;
    }
    table.rows.push_back({fields[c_id], {z, y, x}, d});
  }
  return table;
}

std::string patch_stem(const SlicePatch& patch) {
  return patch.lesion_id + "_" + std::to_string(patch.slice_index);
}

void write_float_raw(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_mask_raw(const fs::path& path, std::span<const std::uint8_t> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<float> read_float_raw(const fs::path& path, std::size_t count) {
  const auto bytes = read_file(path);
  if (bytes.size() != count * sizeof(float))
    throw IntegrityError(path.string() + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(count * sizeof(float)));
  std::vector<float> out(count);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<std::uint8_t> read_mask_raw(const fs::path& path, std::size_t count) {
  const auto bytes = read_file(path);
  if (bytes.size() != count)
    throw IntegrityError(path.string() + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(count));
  return std::vector<std::uint8_t>(bytes.begin(), bytes.end());
}

namespace {

json entry_to_json(const ManifestEntry& e) {
  return json{{"image_path", e.image_path},
              {"mask_path", e.mask_path},
              {"class_label", e.class_label},
              {"lesion_id", e.lesion_id},
              {"patient_id", e.patient_id},
              {"slice_index", e.slice_index},
              {"fold", e.fold ? json(*e.fold) : json(nullptr)},
              {"spacing_yx", {e.spacing_yx[0], e.spacing_yx[1]}}};
}

ManifestEntry entry_from_json(const json& j, std::size_t index) {
  try {
    ManifestEntry e;
    e.image_path = j.at("image_path").get<std::string>();
    e.mask_path = j.at("mask_path").get<std::string>();
    e.class_label = j.at("class_label").get<int>();
    e.lesion_id = j.at("lesion_id").get<std::string>();
    e.patient_id = j.at("patient_id").get<std::string>();
    e.slice_index = j.at("slice_index").get<int>();
    if (!j.at("fold").is_null()) e.fold = j.at("fold").get<int>();
    const auto sp = j.at("spacing_yx").get<std::vector<double>>();
    if (sp.size() != 2 || !(sp[0] > 0.0) || !(sp[1] > 0.0)) throw FormatError("bad spacing_yx");
    e.spacing_yx = {sp[0], sp[1]};
    if (e.class_label != 0 && e.class_label != 1) throw FormatError("class_label must be 0 or 1");
    return e;
  } catch (const json::exception& ex) {
    throw FormatError("manifest entry " + std::to_string(index) + ": " + ex.what());
  } catch (const FormatError& ex) {
    throw FormatError("manifest entry " + std::to_string(index) + ": " + ex.what());
  }
}

}  // namespace

PatchManifest write_patch_dataset(std::span<const SlicePatch> patches, const fs::path& dir) {
  std::set<std::string> stems;
  for (const auto& p : patches) {
    if (p.height != kPatchSize || p.width != kPatchSize)
      throw ParameterError("patch " + patch_stem(p) + " is " + std::to_string(p.height) + "x" +
                           std::to_string(p.width) + ", expected 128x128");
    if (const auto why = validate_patch(p); !why.empty())
      throw ParameterError("patch " + patch_stem(p) + ": " + why);
    if (!stems.insert(patch_stem(p)).second)
      throw ParameterError("duplicate patch " + patch_stem(p));
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create dataset directory " + dir.string());

  PatchManifest manifest;
  json entries = json::array();
  for (const auto& p : patches) {
    ManifestEntry e;
    e.image_path = patch_stem(p) + ".img";
    e.mask_path = patch_stem(p) + ".msk";
    e.class_label = p.class_label;
    e.lesion_id = p.lesion_id;
    e.patient_id = p.patient_id;
    e.slice_index = p.slice_index;
    e.fold = p.fold;
    e.spacing_yx = p.spacing_yx;
    write_float_raw(dir / e.image_path, p.image);
    write_mask_raw(dir / e.mask_path, p.mask);
    entries.push_back(entry_to_json(e));
    manifest.entries.push_back(std::move(e));
  }

  const json doc{{"version", manifest.version},
                 {"patch_height", manifest.patch_height},
                 {"patch_width", manifest.patch_width},
                 {"entries", entries}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("short write to manifest.json");
  return manifest;
}

PatchDataset load_patch_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IntegrityError("missing manifest " + manifest_path.string());

  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& ex) {
    throw FormatError("manifest is not valid JSON: " + std::string(ex.what()));
  }

  PatchDataset ds;
  try {
    ds.manifest.version = doc.at("version").get<int>();
    ds.manifest.patch_height = doc.at("patch_height").get<int>();
    ds.manifest.patch_width = doc.at("patch_width").get<int>();
  } catch (const json::exception& ex) {
    throw FormatError("manifest header: " + std::string(ex.what()));
  }
  if (ds.manifest.version != PatchManifest::kVersion)
    throw FormatError("unsupported manifest version " + std::to_string(ds.manifest.version));
  if (ds.manifest.patch_height <= 0 || ds.manifest.patch_width <= 0)
    throw FormatError("manifest patch size must be positive");
  if (!doc.contains("entries") || !doc["entries"].is_array()) throw FormatError("manifest lacks entries");

  const int h = ds.manifest.patch_height, w = ds.manifest.patch_width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::size_t index = 0;
  for (const auto& j : doc["entries"]) {
    ManifestEntry e = entry_from_json(j, index);
    const std::string name =
        "entry " + std::to_string(index) + " (" + fs::path(e.image_path).stem().string() + ")";
    for (const auto& rel : {e.image_path, e.mask_path})
      if (!fs::is_regular_file(dir / rel)) throw IntegrityError(name + ": missing file " + rel);

    SlicePatch p;
    p.height = h;
    p.width = w;
    try {
      p.image = read_float_raw(dir / e.image_path, n);
      p.mask = read_mask_raw(dir / e.mask_path, n);
    } catch (const IntegrityError& ex) {
      throw IntegrityError(name + ": " + ex.what());
    }
    if (std::any_of(p.mask.begin(), p.mask.end(), [](std::uint8_t v) { return v > 1; }))
      throw IntegrityError(name + ": mask values outside {0,1}");
    if (e.class_label != (p.mask_nonempty() ? 1 : 0))
      throw IntegrityError(name + ": class_label " + std::to_string(e.class_label) +
                           " disagrees with mask emptiness");
    p.class_label = e.class_label;
    p.lesion_id = e.lesion_id;
    p.patient_id = e.patient_id;
    p.slice_index = e.slice_index;
    p.fold = e.fold;
    p.spacing_yx = e.spacing_yx;
    ds.patches.push_back(std::move(p));
    ds.manifest.entries.push_back(std::move(e));
    ++index;
  }
  return ds;
}

}  // namespace nodseg

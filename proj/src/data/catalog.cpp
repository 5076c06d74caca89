#include "tripcast/data/catalog.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "tripcast/core/error.hpp"
#include "tripcast/core/rng.hpp"
#include "tripcast/data/csv.hpp"

namespace tripcast {
namespace {

struct Spec {
  const char* name;
  double min;
  double max;
};

// Vitals first; HR, SBP and DBP are the forecast targets.
constexpr Spec kNumeric[] = {
    {"HR", 20, 250},
    {"SBP", 40, 250},
    {"DBP", 10, 200},
    {"RR", 2, 70},
    {"SpO2", 50, 100},
    {"Temp", 30, 43},
    {"MAP", 20, 220},
    {"CVP", -10, 40},
    {"EtCO2", 5, 100},
    {"GCS", 3, 15},
    {"PainScore", 0, 10},
    {"Weight", 20, 300},
    {"FiO2", 21, 100},
    {"Glucose", 10, 1500},
    {"Sodium", 100, 180},
    {"Potassium", 1, 10},
    {"Chloride", 60, 150},
    {"Bicarbonate", 2, 60},
    {"BUN", 1, 250},
    {"Creatinine", 0.1, 25},
    {"Calcium", 3, 18},
    {"Magnesium", 0.3, 8},
    {"Phosphate", 0.3, 15},
    {"Hemoglobin", 2, 25},
    {"Hematocrit", 8, 70},
    {"WBC", 0.1, 150},
    {"Platelets", 2, 1500},
    {"INR", 0.5, 15},
    {"PT", 8, 150},
    {"PTT", 15, 200},
    {"Lactate", 0.2, 30},
    {"pH", 6.7, 7.8},
    {"PaO2", 20, 600},
    {"PaCO2", 10, 150},
    {"BaseExcess", -30, 30},
    {"Albumin", 0.5, 6.5},
    {"Bilirubin", 0.1, 50},
    {"AST", 3, 10000},
    {"ALT", 3, 10000},
    {"AlkPhos", 10, 3000},
    {"Troponin", 0, 100},
    {"BNP", 0, 50000},
    {"CK", 5, 100000},
    {"Lipase", 1, 10000},
    {"Amylase", 1, 10000},
    {"Fibrinogen", 30, 1200},
    {"DDimer", 0, 20000},
    {"IonizedCalcium", 0.5, 2},
    {"AnionGap", 0, 50},
    {"Osmolality", 200, 450},
    {"UrineOutput", 0, 3000},
    {"RBC", 0.5, 8},
    {"MCV", 50, 140},
    {"MCH", 15, 45},
    {"MCHC", 20, 45},
    {"RDW", 8, 35},
    {"Neutrophils", 0, 100},
    {"Lymphocytes", 0, 100},
    {"Monocytes", 0, 100},
    {"Eosinophils", 0, 100},
    {"Basophils", 0, 100},
    {"CRP", 0, 600},
    {"Procalcitonin", 0, 500},
    {"Ammonia", 5, 1000},
    {"UricAcid", 0.5, 30},
    {"Triglycerides", 10, 5000},
    {"Cholesterol", 30, 800},
    {"LDH", 50, 10000},
    {"Ferritin", 1, 100000},
    {"Iron", 5, 500},
    {"TSH", 0, 100},
    {"Cortisol", 0, 200},
    {"DigoxinLevel", 0, 10},
    {"losartan", 0, 300},
    {"metoprolol", 0, 400},
    {"labetalol", 0, 300},
    {"hydralazine", 0, 100},
    {"amiodarone", 0, 2000},
    {"diltiazem", 0, 500},
    {"furosemide", 0, 500},
    {"norepinephrine", 0, 5},
    {"epinephrine", 0, 5},
    {"phenylephrine", 0, 10},
    {"vasopressin", 0, 0.1},
    {"dopamine", 0, 50},
    {"dobutamine", 0, 40},
    {"milrinone", 0, 1},
    {"nitroglycerin", 0, 400},
    {"nicardipine", 0, 20},
    {"esmolol", 0, 300},
    {"heparin", 0, 5000},
    {"enoxaparin", 0, 300},
    {"insulin", 0, 100},
    {"propofol", 0, 100},
    {"midazolam", 0, 50},
    {"fentanyl", 0, 500},
    {"morphine", 0, 50},
    {"hydromorphone", 0, 20},
    {"dexmedetomidine", 0, 2},
    {"ketamine", 0, 500},
    {"lorazepam", 0, 20},
    {"haloperidol", 0, 20},
    {"vancomycin", 0, 4000},
    {"piperacillin", 0, 5000},
    {"cefazolin", 0, 3000},
    {"ceftriaxone", 0, 3000},
    {"meropenem", 0, 3000},
    {"metronidazole", 0, 1500},
    {"acetaminophen", 0, 1500},
    {"potassium_chloride", 0, 200},
    {"magnesium_sulfate", 0, 10},
    {"calcium_gluconate", 0, 10},
    {"sodium_bicarbonate", 0, 300},
    {"normal_saline", 0, 5000},
    {"lactated_ringers", 0, 5000},
    {"dextrose", 0, 2000},
    {"packed_red_cells", 0, 2000},
};

constexpr const char* kYesNo[] = {
    "MechanicalVentilation", "Dialysis",     "ArterialLine", "CentralLine",
    "FoleyCatheter",         "Restraints",   "Isolation",    "Turned",
    "OralCare",              "NPO",          "DNR",          "SedationHold",
};

static_assert(std::size(kNumeric) == 117);
static_assert(std::size(kYesNo) == 12);

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

FeatureCatalog::FeatureCatalog(std::vector<Feature> features) : features_(std::move(features)) {
  std::set<std::string> names;
  std::size_t targets = 0;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    const Feature& f = features_[i];
    if (f.id != static_cast<std::int32_t>(i + 1))
      throw DataError("catalog: feature '" + f.name + "' has id " + std::to_string(f.id) +
                      ", expected " + std::to_string(i + 1));
    if (f.name.empty() || !names.insert(f.name).second)
      throw DataError("catalog: duplicate or empty feature name '" + f.name + "'");
    if (f.kind == FeatureKind::numeric && !(f.min < f.max))
      throw DataError("catalog: feature '" + f.name + "' has an empty valid range");
    if (f.fitted && !(f.std > 0.0))
      throw DataError("catalog: feature '" + f.name + "' has non-positive std");
    if (f.is_target) {
      ++targets;
      if (f.kind != FeatureKind::numeric)
        throw DataError("catalog: target feature '" + f.name + "' must be numeric");
    }
  }
  if (targets != 3)
    throw DataError("catalog: expected exactly 3 target features, found " +
                    std::to_string(targets));
}

FeatureCatalog FeatureCatalog::reference() {
  std::vector<Feature> features;
  std::int32_t id = 1;
  for (const Spec& s : kNumeric) {
    Feature f;
    f.id = id++;
    f.name = s.name;
    f.min = s.min;
    f.max = s.max;
    f.is_target = f.id <= 3;
    features.push_back(f);
  }
  for (const char* name : kYesNo) {
    Feature f;
    f.id = id++;
    f.name = name;
    f.kind = FeatureKind::yes_no;
    f.min = 0;
    f.max = 1;
    features.push_back(f);
  }
  return FeatureCatalog(std::move(features));
}

const Feature& FeatureCatalog::at(std::int32_t id) const {
  if (!contains(id))
    throw DataError("unknown feature id " + std::to_string(id) + " (catalog has ids 1.." +
                    std::to_string(features_.size()) + ")");
  return features_[static_cast<std::size_t>(id - 1)];
}

Feature& FeatureCatalog::at(std::int32_t id) {
  return const_cast<Feature&>(static_cast<const FeatureCatalog&>(*this).at(id));
}

std::optional<std::int32_t> FeatureCatalog::find(std::string_view name) const {
  for (const Feature& f : features_)
    if (f.name == name) return f.id;
  return std::nullopt;
}

std::vector<std::int32_t> FeatureCatalog::target_ids() const {
  std::vector<std::int32_t> ids;
  for (const Feature& f : features_)
    if (f.is_target) ids.push_back(f.id);
  return ids;
}

std::string FeatureCatalog::to_csv() const {
  std::ostringstream out;
  out << "id,name,kind,min,max,is_target,mean,std\n";
  for (const Feature& f : features_) {
    out << f.id << ',' << f.name << ',' << (f.kind == FeatureKind::numeric ? "numeric" : "yes_no")
        << ',' << format_double(f.min) << ',' << format_double(f.max) << ','
        << (f.is_target ? 1 : 0) << ',';
    if (f.fitted) out << format_double(f.mean) << ',' << format_double(f.std);
    else out << ',';
    out << '\n';
  }
  return out.str();
}

std::uint64_t FeatureCatalog::hash() const { return fnv1a64(to_csv()); }

void FeatureCatalog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write catalog " + path.string());
  out << to_csv();
  if (!out) throw IoError("failed writing catalog " + path.string());
}

FeatureCatalog FeatureCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open catalog " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::vector<Feature> features;
  const std::string where = path.string();
  if (!std::getline(in, line)) throw ParseError(where + ": empty catalog file");
  ++lineno;
  {
    auto header = csv::split(csv::chomp(line));
    const std::vector<std::string> base{"id", "name", "kind", "min", "max", "is_target"};
    const bool ok = (header.size() == 6 || header.size() == 8) &&
                    std::equal(base.begin(), base.end(), header.begin()) &&
                    (header.size() == 6 || (header[6] == "mean" && header[7] == "std"));
    if (!ok) throw ParseError(where + ":1: unexpected catalog header '" + line + "'");
  }
  while (std::getline(in, line)) {
    ++lineno;
    line = csv::chomp(line);
    if (line.empty()) continue;
    const auto cells = csv::split(line);
    const std::string at = where + ":" + std::to_string(lineno);
    if (cells.size() != 6 && cells.size() != 8)
      throw ParseError(at + ": expected 6 or 8 columns, got " + std::to_string(cells.size()));
    Feature f;
    f.id = static_cast<std::int32_t>(csv::parse_int(cells[0], at, "id"));
    f.name = cells[1];
    if (cells[2] == "numeric") f.kind = FeatureKind::numeric;
    else if (cells[2] == "yes_no") f.kind = FeatureKind::yes_no;
    else throw ParseError(at + ": unknown feature kind '" + cells[2] + "'");
    f.min = csv::parse_double(cells[3], at, "min");
    f.max = csv::parse_double(cells[4], at, "max");
    const auto target = csv::parse_int(cells[5], at, "is_target");
    if (target != 0 && target != 1) throw ParseError(at + ": is_target must be 0 or 1");
    f.is_target = target == 1;
    if (cells.size() == 8 && !(cells[6].empty() && cells[7].empty())) {
      f.mean = csv::parse_double(cells[6], at, "mean");
      f.std = csv::parse_double(cells[7], at, "std");
      f.fitted = true;
    }
    features.push_back(f);
  }
  return FeatureCatalog(std::move(features));
}

}  // namespace tripcast

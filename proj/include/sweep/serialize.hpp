#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "sweep/optimizer.hpp"
#include "sweep/pmp.hpp"

namespace sweep {

using Json = nlohmann::json;

/// CSV with header t,x1..xn,y1..yl,u1..um,xi1..xik,zeta at 17 significant
/// digits. The control of interval j is written on row j (the last row
/// repeats the last interval).
void write_trajectory_csv(std::ostream& os, const Trajectory& tr);
void save_trajectory_csv(const std::string& path, const Trajectory& tr);
/// Dimensions are read from the header.
Trajectory read_trajectory_csv(std::istream& is);
Trajectory load_trajectory_csv(const std::string& path);

Json certificate_to_json(const PmpCertificate& c);
PmpCertificate certificate_from_json(const Json& j);
PmpCertificate load_certificate(const std::string& path);

Json to_json(const Vec& v);
Json to_json(const TrajectoryDiagnostics& d);
Json to_json(const InvarianceReport& r);
Json to_json(const CheckReport& r);
Json to_json(const AssemblyReport& r);
Json to_json(const OptimizeResult& r);

void save_json(const std::string& path, const Json& j);
Json load_json(const std::string& path);

}  // namespace sweep

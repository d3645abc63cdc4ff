#pragma once

#include "cascade_source.hpp"
#include "config.hpp"
#include "correlator.hpp"
#include "errors.hpp"
#include "experiment.hpp"
#include "fidelity.hpp"
#include "link.hpp"
#include "polarization.hpp"
#include "polcontrol.hpp"
#include "random.hpp"
#include "report.hpp"
#include "stream_format.hpp"
#include "timetag.hpp"

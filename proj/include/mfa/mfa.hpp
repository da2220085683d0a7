#pragma once

#include "mfa/dataio.hpp"
#include "mfa/em.hpp"
#include "mfa/fit_report.hpp"
#include "mfa/linalg.hpp"
#include "mfa/model.hpp"
#include "mfa/random.hpp"
#include "mfa/scoring.hpp"
#include "mfa/sgd.hpp"
#include "mfa/types.hpp"

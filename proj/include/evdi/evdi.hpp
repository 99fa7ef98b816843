// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evdi/calibrate.hpp"
#include "evdi/common.hpp"
#include "evdi/dataio.hpp"
#include "evdi/edi_prior.hpp"
#include "evdi/event_model.hpp"
#include "evdi/geometry.hpp"
#include "evdi/imaging.hpp"
#include "evdi/integrator.hpp"
#include "evdi/simulator.hpp"

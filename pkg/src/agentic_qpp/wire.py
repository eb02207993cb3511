"""Shared HTTP plumbing for the completion, embedding, and scoring clients."""

from __future__ import annotations

import os
import time
from typing import Any

import requests

from .errors import ConfigurationError, TransportError

TOKEN_ENV_VAR = "AGENTIC_QPP_TOKEN"
DEFAULT_TIMEOUT_S = 30.0
MAX_ATTEMPTS = 3
INITIAL_BACKOFF_S = 0.5


def auth_headers() -> dict[str, str]:
    """Bearer header from the auth env var; the token itself is never logged."""
    token = os.environ.get(TOKEN_ENV_VAR)
    return {"Authorization": f"Bearer {token}"} if token else {}


def post_json(url: str, payload: dict[str, Any], timeout: float = DEFAULT_TIMEOUT_S) -> dict[str, Any]:
    """Single POST of a JSON payload; 4xx is a configuration problem, the rest retryable."""
    try:
        response = requests.post(url, json=payload, headers=auth_headers(), timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"POST {url} failed: {exc}") from exc
    if 400 <= response.status_code < 500:
        raise ConfigurationError(f"POST {url} rejected with HTTP {response.status_code}")
    if response.status_code != 200:
        raise TransportError(f"POST {url} returned HTTP {response.status_code}")
    try:
        body = response.json()
    except ValueError as exc:
        raise TransportError(f"POST {url} returned non-JSON body") from exc
    if not isinstance(body, dict):
        raise TransportError(f"POST {url} returned a non-object JSON body")
    return body


def post_json_with_retries(
    url: str,
    payload: dict[str, Any],
    timeout: float = DEFAULT_TIMEOUT_S,
    sleep=time.sleep,
) -> dict[str, Any]:
    """POST with up to MAX_ATTEMPTS attempts and exponential backoff on transport errors."""
    delay = INITIAL_BACKOFF_S
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            return post_json(url, payload, timeout=timeout)
        except TransportError:
            if attempt == MAX_ATTEMPTS:
                raise
            sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")

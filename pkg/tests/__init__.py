"""Test suite for the adaptive_td3bc package."""

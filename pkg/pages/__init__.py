"""Streamlit tabs of the result browser, one module per tab."""

"""Knowledge graph loading, id dictionaries and filter indexes"""
